#pragma once

#include <cmath>
#include <stdexcept>

#include "mono3d/boxes.hpp"
#include "mono3d/encoding.hpp"
#include "mono3d/geometry.hpp"

namespace mono3d {

struct LossWeights {
  double omega = 10.0;  // 2D box term inside the 2D loss
  double alpha = 10.0;  // coarse-depth term inside the depth loss
  double beta = 10.0;   // projected-center term inside the location loss
};

struct LossOptions {
  // The masked terms are plain sums over assigned cells by default. With
  // normalize set they are divided by the number of assigned cells instead,
  // giving per-object means.
  bool normalize = false;
};

struct LossReport {
  double l_conf = 0.0;
  double l_bbox = 0.0;
  double l_2d = 0.0;
  double l_zc = 0.0;
  double l_zdelta = 0.0;
  double l_depth = 0.0;
  double l_c2d = 0.0;
  double l_c3d = 0.0;
  double l_location = 0.0;
  double l_corners = 0.0;
  double l_joint = 0.0;
  double total = 0.0;
};

namespace detail {

inline void check_shapes(const CellTargets& pred, const CellTargets& gt) {
  if (!pred.grid.same_shape(gt.grid) || pred.cells.size() != gt.cells.size() ||
      pred.cells.size() != static_cast<size_t>(pred.grid.n_cells()))
    throw std::invalid_argument("loss: predicted and ground-truth grids differ in shape");
}

// Cross entropy of a 2-class softmax against a hard label, evaluated in a
// form that stays finite for any logit magnitude.
inline double cross_entropy(double logit_bg, double logit_obj, int label) {
  double margin = (label == 1) ? logit_obj - logit_bg : logit_bg - logit_obj;
  if (margin >= 0.0) return std::log1p(std::exp(-margin));
  return -margin + std::log1p(std::exp(margin));
}

inline double mask_scale(const CellTargets& gt, const LossOptions& o) {
  if (!o.normalize) return 1.0;
  return 1.0 / std::max(1, gt.count_assigned());
}

// Center a cell's targets decode to, shared by the location and joint
// losses: backprojection of the offset projected center at the cell's
// depth, plus the 3D refinement.
inline Point3 decoded_center(const CellTarget& c, const Point2& cc,
                             const CameraIntrinsics& k) {
  double z = c.z_cc + c.dzc;
  if (!(z > 0.0)) throw std::domain_error("loss: decoded center depth not positive");
  return backproject({cc.u + c.dxc, cc.v + c.dyc}, z, k) + c.dC;
}

}  // namespace detail

struct Loss2d {
  double l_conf = 0.0;
  double l_bbox = 0.0;
  double l_2d = 0.0;
};

// Confidence is a softmax cross entropy averaged over every cell of the
// grid, assigned or not, so spurious confidence anywhere is penalized. The
// box term is a masked L1 sum over assigned cells, in the units the targets
// are stored in (pixel offsets, normalized sizes).
inline Loss2d loss_2d(const CellTargets& pred, const CellTargets& gt, const LossWeights& w,
                      const LossOptions& opts = {}) {
  detail::check_shapes(pred, gt);
  Loss2d r;
  int n = gt.grid.n_cells();
  for (int i = 0; i < n; ++i) {
    const CellTarget& p = pred.cells[i];
    const CellTarget& g = gt.cells[i];
    int label = g.object_index >= 0 ? 1 : 0;
    r.l_conf += detail::cross_entropy(p.logit_bg, p.logit_obj, label);
    if (label == 1)
      r.l_bbox += std::abs(p.dxb - g.dxb) + std::abs(p.dyb - g.dyb) +
                  std::abs(p.wn - g.wn) + std::abs(p.hn - g.hn);
  }
  r.l_conf /= n;
  r.l_bbox *= detail::mask_scale(gt, opts);
  r.l_2d = r.l_conf + w.omega * r.l_bbox;
  return r;
}

struct LossDepth {
  double l_zc = 0.0;
  double l_zdelta = 0.0;
  double l_depth = 0.0;
};

// Both depth stages regress to the same true depth: the coarse term sees
// z_cc alone, the refinement term sees the corrected sum, and weighting the
// coarse term encourages it to carry the bulk of the depth.
inline LossDepth loss_depth(const CellTargets& pred, const CellTargets& gt,
                            const LossWeights& w, const LossOptions& opts = {}) {
  detail::check_shapes(pred, gt);
  LossDepth r;
  int n = gt.grid.n_cells();
  for (int i = 0; i < n; ++i) {
    const CellTarget& p = pred.cells[i];
    const CellTarget& g = gt.cells[i];
    if (g.object_index < 0) continue;
    double z_true = g.z_cc + g.dzc;
    r.l_zc += std::abs(p.z_cc - z_true);
    r.l_zdelta += std::abs(p.z_cc + p.dzc - z_true);
  }
  double s = detail::mask_scale(gt, opts);
  r.l_zc *= s;
  r.l_zdelta *= s;
  r.l_depth = w.alpha * r.l_zc + r.l_zdelta;
  return r;
}

struct LossLocation {
  double l_c2d = 0.0;
  double l_c3d = 0.0;
  double l_location = 0.0;
};

// The 2D part compares projected centers in the image plane; the 3D part
// compares fully decoded centers, so depth errors leak into it through the
// backprojection ray exactly as they would at inference.
inline LossLocation loss_location(const CellTargets& pred, const CellTargets& gt,
                                  const CameraIntrinsics& k, const LossWeights& w,
                                  const LossOptions& opts = {}) {
  detail::check_shapes(pred, gt);
  LossLocation r;
  int n = gt.grid.n_cells();
  for (int i = 0; i < n; ++i) {
    const CellTarget& p = pred.cells[i];
    const CellTarget& g = gt.cells[i];
    if (g.object_index < 0) continue;
    r.l_c2d += std::abs(p.dxc - g.dxc) + std::abs(p.dyc - g.dyc);
    Point2 cc = cell_center(i, gt.grid);
    Point3 cp = detail::decoded_center(p, cc, k);
    Point3 cg = detail::decoded_center(g, cc, k);
    r.l_c3d += std::abs(cp.x - cg.x) + std::abs(cp.y - cg.y) + std::abs(cp.z - cg.z);
  }
  double s = detail::mask_scale(gt, opts);
  r.l_c2d *= s;
  r.l_c3d *= s;
  r.l_location = w.beta * r.l_c2d + r.l_c3d;
  return r;
}

// L1 over the 8 local-frame corners, coordinate-wise, on assigned cells.
// Deliberately order-sensitive: a permuted but geometrically identical
// corner set is a wrong prediction.
inline double loss_corners(const CellTargets& pred, const CellTargets& gt,
                           const LossOptions& opts = {}) {
  detail::check_shapes(pred, gt);
  double sum = 0.0;
  int n = gt.grid.n_cells();
  for (int i = 0; i < n; ++i) {
    const CellTarget& p = pred.cells[i];
    const CellTarget& g = gt.cells[i];
    if (g.object_index < 0) continue;
    for (int c = 0; c < 8; ++c) {
      sum += std::abs(p.corners[c].x - g.corners[c].x) +
             std::abs(p.corners[c].y - g.corners[c].y) +
             std::abs(p.corners[c].z - g.corners[c].z);
    }
  }
  return sum * detail::mask_scale(gt, opts);
}

// Corner loss evaluated in the camera frame: both corner sets are lifted out
// of the local frame with the rotation of the ground-truth object's bearing
// and anchored at their own decoded centers. Center errors therefore move
// all eight corners rigidly, and corner errors appear rotated by the frame
// they were regressed in; using the ground-truth bearing on both sides keeps
// the term a pure function of those two error sources.
inline double loss_joint(const CellTargets& pred, const CellTargets& gt,
                         const CameraIntrinsics& k, const LossOptions& opts = {}) {
  detail::check_shapes(pred, gt);
  double sum = 0.0;
  int n = gt.grid.n_cells();
  for (int i = 0; i < n; ++i) {
    const CellTarget& p = pred.cells[i];
    const CellTarget& g = gt.cells[i];
    if (g.object_index < 0) continue;
    Point2 cc = cell_center(i, gt.grid);
    Point3 cp = detail::decoded_center(p, cc, k);
    Point3 cg = detail::decoded_center(g, cc, k);
    double az = azimuth(cg);
    for (int c = 0; c < 8; ++c) {
      Point3 pc = rotate_y(p.corners[c], az) + cp;
      Point3 gc = rotate_y(g.corners[c], az) + cg;
      sum += std::abs(pc.x - gc.x) + std::abs(pc.y - gc.y) + std::abs(pc.z - gc.z);
    }
  }
  return sum * detail::mask_scale(gt, opts);
}

// All five composite losses plus their parts. The grand total is the
// unweighted sum of the composites; the inner weights already live inside
// each composite.
inline LossReport evaluate_losses(const CellTargets& pred, const CellTargets& gt,
                                  const CameraIntrinsics& k, const LossWeights& w = {},
                                  const LossOptions& opts = {}) {
  LossReport r;
  Loss2d a = loss_2d(pred, gt, w, opts);
  r.l_conf = a.l_conf;
  r.l_bbox = a.l_bbox;
  r.l_2d = a.l_2d;
  LossDepth d = loss_depth(pred, gt, w, opts);
  r.l_zc = d.l_zc;
  r.l_zdelta = d.l_zdelta;
  r.l_depth = d.l_depth;
  LossLocation loc = loss_location(pred, gt, k, w, opts);
  r.l_c2d = loc.l_c2d;
  r.l_c3d = loc.l_c3d;
  r.l_location = loc.l_location;
  r.l_corners = loss_corners(pred, gt, opts);
  r.l_joint = loss_joint(pred, gt, k, opts);
  r.total = r.l_2d + r.l_depth + r.l_location + r.l_corners + r.l_joint;
  return r;
}

// Running sum of reports across frames; composite identities survive the
// aggregation because every term is linear in the per-frame values.
struct LossAccumulator {
  LossReport sum;
  long n_frames = 0;

  void add(const LossReport& r) {
    sum.l_conf += r.l_conf;
    sum.l_bbox += r.l_bbox;
    sum.l_2d += r.l_2d;
    sum.l_zc += r.l_zc;
    sum.l_zdelta += r.l_zdelta;
    sum.l_depth += r.l_depth;
    sum.l_c2d += r.l_c2d;
    sum.l_c3d += r.l_c3d;
    sum.l_location += r.l_location;
    sum.l_corners += r.l_corners;
    sum.l_joint += r.l_joint;
    sum.total += r.total;
    ++n_frames;
  }

  void merge(const LossAccumulator& o) {
    LossReport r = o.sum;
    long n = o.n_frames;
    add(r);
    n_frames += n - 1;
  }

  LossReport mean() const {
    LossReport m = sum;
    if (n_frames == 0) return m;
    double inv = 1.0 / n_frames;
    m.l_conf *= inv;
    m.l_bbox *= inv;
    m.l_2d *= inv;
    m.l_zc *= inv;
    m.l_zdelta *= inv;
    m.l_depth *= inv;
    m.l_c2d *= inv;
    m.l_c3d *= inv;
    m.l_location *= inv;
    m.l_corners *= inv;
    m.l_joint *= inv;
    m.total *= inv;
    return m;
  }
};

}  // namespace mono3d
