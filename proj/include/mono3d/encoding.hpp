#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mono3d/assignment.hpp"
#include "mono3d/boxes.hpp"
#include "mono3d/geometry.hpp"
#include "mono3d/iou.hpp"
#include "mono3d/kitti.hpp"

namespace mono3d {

// Logit magnitude used when materializing a hard {0,1} confidence label as a
// 2-class score vector; the margin is large enough that the cross entropy of
// a correct label is below 1e-40.
inline constexpr double kLogitMargin = 50.0;

// Regression targets of one grid cell. For ground-truth encodings pr_obj is
// exactly 0 or 1; for predictions it is a score in [0,1]. logits hold the
// (background, object) confidence pair the classification loss consumes.
// Offsets dxb/dyb (2D box center) and dxc/dyc (projected 3D center) are in
// pixels relative to the cell center; wn/hn are box sizes normalized by the
// image size; depths are meters. corners live in the object-local frame.
struct CellTarget {
  int object_index = -1;
  double pr_obj = 0.0;
  double logit_bg = kLogitMargin;
  double logit_obj = -kLogitMargin;
  double dxb = 0.0, dyb = 0.0, wn = 0.0, hn = 0.0;
  double z_cc = 0.0, dzc = 0.0;
  double dxc = 0.0, dyc = 0.0;
  Point3 dC;
  Corners corners{};
};

struct CellTargets {
  GridSpec grid;
  std::vector<CellTarget> cells;  // dense, grid.n_cells() entries, row-major

  int count_assigned() const {
    int n = 0;
    for (const auto& c : cells) n += (c.object_index >= 0);
    return n;
  }
};

// One ground-truth object as the encoder consumes it.
struct GtBox {
  ABBox3D box3d;
  Box2D box2d;
};

// Fills the per-cell targets for every cell the assignment rule gives an
// object. The coarse depth carries the full center depth and the refinement
// is zero: both depth stages regress toward the same true value, so the
// canonical target puts everything in the coarse slot. delta_C absorbs what
// backprojecting the cell-quantized projected center misses; with exact
// inputs it is the zero vector.
inline CellTargets encode(const std::vector<GtBox>& gt, const CameraIntrinsics& k,
                          const GridSpec& grid) {
  std::vector<AssignmentCandidate> cands;
  cands.reserve(gt.size());
  for (const auto& g : gt) {
    if (!(g.box3d.center.z > 0.0))
      throw std::domain_error("encode: ground-truth center behind camera");
    cands.push_back({g.box2d, g.box3d.center.z});
  }
  CellAssignment asg = assign(cands, grid);

  CellTargets t;
  t.grid = grid;
  t.cells.assign(grid.n_cells(), CellTarget{});
  for (int cell = 0; cell < grid.n_cells(); ++cell) {
    int oi = asg.object_index[cell];
    if (oi < 0) continue;
    const GtBox& g = gt[oi];
    CellTarget& c = t.cells[cell];
    Point2 cc = cell_center(cell, grid);

    c.object_index = oi;
    c.pr_obj = 1.0;
    c.logit_bg = -kLogitMargin;
    c.logit_obj = kLogitMargin;

    c.dxb = g.box2d.center.u - cc.u;
    c.dyb = g.box2d.center.v - cc.v;
    c.wn = g.box2d.w / grid.w;
    c.hn = g.box2d.h / grid.h;

    c.z_cc = g.box3d.center.z;
    c.dzc = 0.0;

    Point2 proj = project(g.box3d.center, k);
    c.dxc = proj.u - cc.u;
    c.dyc = proj.v - cc.v;

    Point3 coarse = backproject({cc.u + c.dxc, cc.v + c.dyc}, c.z_cc, k);
    c.dC = g.box3d.center - coarse;

    c.corners = corners_local(g.box3d);
  }
  return t;
}

struct DecodedDetection {
  ABBox3D box3d;
  Box2D box2d;
  double score = 0.0;
  int cell = -1;  // grid cell the detection decoded from
};

struct DecodeResult {
  std::vector<DecodedDetection> detections;
  int discarded = 0;  // cells whose decoded depth was not positive
};

// Greedy score-descending suppression on BEV overlap. Keeps the highest
// score among duplicates; ties break toward the lower cell index.
inline std::vector<DecodedDetection> nms_bev(std::vector<DecodedDetection> dets,
                                             double iou_threshold) {
  std::sort(dets.begin(), dets.end(), [](const DecodedDetection& a, const DecodedDetection& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.cell < b.cell;
  });
  std::vector<DecodedDetection> kept;
  for (const auto& d : dets) {
    bool dup = false;
    for (const auto& kdet : kept) {
      if (iou_bev(d.box3d, kdet.box3d) > iou_threshold) {
        dup = true;
        break;
      }
    }
    if (!dup) kept.push_back(d);
  }
  return kept;
}

// Inverse of encode. Every cell at or above the score threshold yields a
// candidate: depth = z_cc + dzc, projected center = cell center + offsets,
// 3D center = backprojection + delta_C, the box rebuilt from the local
// corners anchored at that center. Candidates whose depth comes out
// non-positive are dropped and counted. Duplicate candidates for the same
// object (neighboring cells in scope) are merged by BEV NMS; pass
// nms_iou <= 0 to keep all candidates.
inline DecodeResult decode(const CellTargets& t, const CameraIntrinsics& k,
                           double score_threshold, double nms_iou = 0.5) {
  DecodeResult r;
  const GridSpec& grid = t.grid;
  for (int cell = 0; cell < grid.n_cells(); ++cell) {
    const CellTarget& c = t.cells[cell];
    if (!(c.pr_obj >= score_threshold)) continue;
    double z = c.z_cc + c.dzc;
    if (!(z > 0.0)) {
      ++r.discarded;
      continue;
    }
    Point2 cc = cell_center(cell, grid);
    Point3 center = backproject({cc.u + c.dxc, cc.v + c.dyc}, z, k) + c.dC;
    if (!(center.z > 0.0) || (center.x == 0.0 && center.z == 0.0)) {
      ++r.discarded;
      continue;
    }
    DecodedDetection d;
    d.box3d = box_from_local_corners(c.corners, center);
    d.box2d = {{cc.u + c.dxb, cc.v + c.dyb}, c.wn * grid.w, c.hn * grid.h};
    d.score = c.pr_obj;
    d.cell = cell;
    r.detections.push_back(d);
  }
  if (nms_iou > 0.0) r.detections = nms_bev(std::move(r.detections), nms_iou);
  return r;
}

// Localization error induced by the ablation of standing in the 2D box
// center where the projected 3D center belongs: both are backprojected at
// the true depth and compared component-wise. Horizontal error scales as
// |u_b - u_c| * Z / f_x, which is what makes the distinction matter.
inline std::pair<double, double> center_substitution_error(const ABBox3D& gt,
                                                           const Box2D& box2d,
                                                           const CameraIntrinsics& k) {
  double z = gt.center.z;
  Point3 via_b = backproject(box2d.center, z, k);
  Point3 via_c = backproject(project(gt.center, k), z, k);
  return {std::abs(via_b.x - via_c.x), std::abs(via_b.y - via_c.y)};
}

// --- flat-table serialization ---------------------------------------------
//
// CellTargets round-trip through a dense CSV table, one row per cell:
//
//   #mono3d-targets,1,<image_w>,<image_h>,<sx>,<sy>,<sigma_scope>
//   cell_ix,cell_iy,object_index,pr_obj,logit_bg,logit_obj,
//   dxb,dyb,wn,hn,z_cc,dzc,dxc,dyc,dCx,dCy,dCz,
//   c0x,c0y,c0z, ... ,c7x,c7y,c7z          (41 columns total)
//
// Numbers are written in shortest round-trip form, so parse(serialize(t))
// reproduces every double bit-exactly.

inline const char* kTargetsCsvHeader =
    "cell_ix,cell_iy,object_index,pr_obj,logit_bg,logit_obj,dxb,dyb,wn,hn,z_cc,dzc,"
    "dxc,dyc,dCx,dCy,dCz,c0x,c0y,c0z,c1x,c1y,c1z,c2x,c2y,c2z,c3x,c3y,c3z,c4x,c4y,"
    "c4z,c5x,c5y,c5z,c6x,c6y,c6z,c7x,c7y,c7z";

inline std::string targets_to_csv(const CellTargets& t) {
  using detail::format_double;
  std::string s = "#mono3d-targets,1," + format_double(t.grid.w) + "," +
                  format_double(t.grid.h) + "," + std::to_string(t.grid.sx) + "," +
                  std::to_string(t.grid.sy) + "," + format_double(t.grid.sigma_scope) + "\n";
  s += kTargetsCsvHeader;
  s += '\n';
  for (int cell = 0; cell < t.grid.n_cells(); ++cell) {
    const CellTarget& c = t.cells[cell];
    s += std::to_string(cell % t.grid.sx) + "," + std::to_string(cell / t.grid.sx);
    s += "," + std::to_string(c.object_index);
    for (double v : {c.pr_obj, c.logit_bg, c.logit_obj, c.dxb, c.dyb, c.wn, c.hn,
                     c.z_cc, c.dzc, c.dxc, c.dyc, c.dC.x, c.dC.y, c.dC.z})
      s += "," + format_double(v);
    for (const Point3& p : c.corners)
      s += "," + format_double(p.x) + "," + format_double(p.y) + "," + format_double(p.z);
    s += '\n';
  }
  return s;
}

inline CellTargets targets_from_csv(std::string_view text) {
  auto next_line = [&text]() {
    size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = (nl == std::string_view::npos) ? std::string_view{} : text.substr(nl + 1);
    return line;
  };
  auto split = [](std::string_view line) {
    std::vector<std::string_view> f;
    size_t i = 0;
    while (i <= line.size()) {
      size_t j = line.find(',', i);
      if (j == std::string_view::npos) j = line.size();
      f.push_back(line.substr(i, j - i));
      i = j + 1;
    }
    return f;
  };

  auto meta = split(next_line());
  if (meta.size() != 7 || meta[0] != "#mono3d-targets" || meta[1] != "1")
    throw std::runtime_error("targets_from_csv: missing or unsupported metadata line");
  CellTargets t;
  t.grid.w = detail::parse_double_field(meta[2], 1);
  t.grid.h = detail::parse_double_field(meta[3], 1);
  t.grid.sx = detail::parse_int_field(meta[4], 1);
  t.grid.sy = detail::parse_int_field(meta[5], 1);
  t.grid.sigma_scope = detail::parse_double_field(meta[6], 1);
  if (t.grid.sx < 1 || t.grid.sy < 1)
    throw std::runtime_error("targets_from_csv: invalid grid shape");
  next_line();  // column header
  t.cells.assign(t.grid.n_cells(), CellTarget{});

  int line_no = 2;
  while (!text.empty()) {
    std::string_view line = next_line();
    ++line_no;
    if (line.empty()) continue;
    auto f = split(line);
    if (f.size() != 41)
      throw std::runtime_error("targets_from_csv: line " + std::to_string(line_no) +
                               " has " + std::to_string(f.size()) + " columns, expected 41");
    int ix = detail::parse_int_field(f[0], line_no);
    int iy = detail::parse_int_field(f[1], line_no);
    if (ix < 0 || ix >= t.grid.sx || iy < 0 || iy >= t.grid.sy)
      throw std::runtime_error("targets_from_csv: line " + std::to_string(line_no) +
                               ": cell index outside grid");
    CellTarget& c = t.cells[t.grid.index(ix, iy)];
    c.object_index = detail::parse_int_field(f[2], line_no);
    double* scalars[] = {&c.pr_obj, &c.logit_bg, &c.logit_obj, &c.dxb, &c.dyb, &c.wn,
                         &c.hn,     &c.z_cc,     &c.dzc,       &c.dxc, &c.dyc,
                         &c.dC.x,   &c.dC.y,     &c.dC.z};
    for (int i = 0; i < 14; ++i) *scalars[i] = detail::parse_double_field(f[3 + i], line_no);
    for (int corner = 0; corner < 8; ++corner) {
      c.corners[corner].x = detail::parse_double_field(f[17 + 3 * corner], line_no);
      c.corners[corner].y = detail::parse_double_field(f[18 + 3 * corner], line_no);
      c.corners[corner].z = detail::parse_double_field(f[19 + 3 * corner], line_no);
    }
  }
  return t;
}

}  // namespace mono3d
