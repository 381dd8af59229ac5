#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "mono3d/boxes.hpp"
#include "mono3d/geometry.hpp"

namespace mono3d {

// Regular grid laid over the image. Cells are w/sx by h/sy pixel rectangles;
// the image size need not divide evenly. sigma_scope is the pixel radius
// within which a cell may claim an object.
struct GridSpec {
  double w = 0.0;
  double h = 0.0;
  int sx = 1;
  int sy = 1;
  double sigma_scope = 0.0;

  double cell_w() const { return w / sx; }
  double cell_h() const { return h / sy; }
  int n_cells() const { return sx * sy; }
  int index(int ix, int iy) const { return iy * sx + ix; }

  bool same_shape(const GridSpec& o) const {
    return w == o.w && h == o.h && sx == o.sx && sy == o.sy;
  }

  // Cell resolution from a feature stride (pixels per cell, rounded up so the
  // grid covers the image), with the scope radius in multiples of cell size.
  static GridSpec from_stride(double w, double h, double stride = 32.0,
                              double sigma_cells = 1.5) {
    GridSpec g;
    g.w = w;
    g.h = h;
    g.sx = std::max(1, static_cast<int>(std::ceil(w / stride)));
    g.sy = std::max(1, static_cast<int>(std::ceil(h / stride)));
    g.sigma_scope = sigma_cells * std::max(g.cell_w(), g.cell_h());
    return g;
  }
};

inline Point2 cell_center(int ix, int iy, const GridSpec& g) {
  if (ix < 0 || ix >= g.sx || iy < 0 || iy >= g.sy)
    throw std::out_of_range("cell_center: cell index outside grid");
  return {(ix + 0.5) * g.cell_w(), (iy + 0.5) * g.cell_h()};
}

inline Point2 cell_center(int index, const GridSpec& g) {
  if (index < 0 || index >= g.n_cells())
    throw std::out_of_range("cell_center: cell index outside grid");
  return cell_center(index % g.sx, index / g.sx, g);
}

// An object as the assignment rule sees it: its 2D box (the anchor is the
// box center) and the depth of its 3D center, which drives the
// closer-instance preference.
struct AssignmentCandidate {
  Box2D box2d;
  double depth = 0.0;
};

// Per-cell assignment result. object_index[cell] is -1 where no object is in
// scope; the loss mask is exactly the set of cells with an index present.
struct CellAssignment {
  std::vector<int> object_index;

  bool assigned(int cell) const { return object_index[cell] >= 0; }
  int count_assigned() const {
    int n = 0;
    for (int v : object_index) n += (v >= 0);
    return n;
  }
};

// Assigns each cell the in-scope object with the smallest center depth.
// A cell is in scope of an object when the Euclidean distance between the
// cell center and the object's 2D box center is strictly less than
// sigma_scope. Depth ties break toward the earlier list index, so the
// encoding is reproducible. Object centers may lie outside the image;
// only the cells themselves are bounded by it.
inline CellAssignment assign(const std::vector<AssignmentCandidate>& objects,
                             const GridSpec& g) {
  CellAssignment a;
  a.object_index.assign(g.n_cells(), -1);
  double cw = g.cell_w(), ch = g.cell_h();
  for (size_t i = 0; i < objects.size(); ++i) {
    const Point2 b = objects[i].box2d.center;
    double z = objects[i].depth;
    if (!(z > 0.0))
      throw std::domain_error("assign: object depth must be positive");
    // Cells whose centers can possibly be within sigma_scope of b.
    int ix0 = std::max(0, static_cast<int>(std::floor((b.u - g.sigma_scope) / cw - 0.5)));
    int ix1 = std::min(g.sx - 1, static_cast<int>(std::ceil((b.u + g.sigma_scope) / cw - 0.5)));
    int iy0 = std::max(0, static_cast<int>(std::floor((b.v - g.sigma_scope) / ch - 0.5)));
    int iy1 = std::min(g.sy - 1, static_cast<int>(std::ceil((b.v + g.sigma_scope) / ch - 0.5)));
    for (int iy = iy0; iy <= iy1; ++iy) {
      for (int ix = ix0; ix <= ix1; ++ix) {
        Point2 c = cell_center(ix, iy, g);
        if (norm(c - b) >= g.sigma_scope) continue;
        int cell = g.index(ix, iy);
        int cur = a.object_index[cell];
        if (cur < 0 || z < objects[cur].depth) a.object_index[cell] = static_cast<int>(i);
      }
    }
  }
  return a;
}

}  // namespace mono3d
