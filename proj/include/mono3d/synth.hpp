#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "mono3d/boxes.hpp"
#include "mono3d/encoding.hpp"
#include "mono3d/geometry.hpp"
#include "mono3d/iou.hpp"
#include "mono3d/kitti.hpp"

namespace mono3d {

// Deterministic generator with a fixed algorithm (splitmix64 core), so the
// same seed yields bit-identical streams on every platform and standard
// library. Distribution shaping is done here for the same reason: the
// stdlib's distributions are not specified bit-for-bit.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return (next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller without the cached spare, so each call consumes exactly two
  // draws and the stream position stays easy to reason about.
  double gaussian(double sigma) {
    double u1 = 1.0 - uniform();  // (0, 1], keeps the log finite
    double u2 = uniform();
    return sigma * std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  int poisson(double lambda) {
    double limit = std::exp(-lambda);
    double prod = 1.0;
    int n = -1;
    do {
      prod *= uniform();
      ++n;
    } while (prod > limit);
    return n;
  }

 private:
  uint64_t state_;
};

// Decorrelates per-frame streams drawn from one base seed.
inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
  uint64_t z = base ^ ((stream + 1) * 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct ValueRange {
  double lo = 0.0;
  double hi = 0.0;
};

struct SceneConfig {
  int n_objects = 5;
  ValueRange depth{8.0, 60.0};
  ValueRange dim_h{1.3, 1.8};
  ValueRange dim_w{1.5, 1.9};
  ValueRange dim_l{3.2, 4.6};
  double yaw_range = std::numbers::pi;  // yaw ~ uniform(-yaw_range, yaw_range)
  double truncation_fraction = 0.0;     // probability a box crosses the image border
  // Flat placement keeps every center at ground_y; free placement samples Y
  // from y_range instead.
  double ground_y = 0.0;
  bool free_y = false;
  ValueRange y_range{-0.5, 1.5};
  // Objects keep their 2D centers at least this far apart, and their BEV
  // footprints disjoint, so each one owns its grid cells and evaluation
  // associations stay unambiguous.
  double min_center_separation = 100.0;
  uint64_t rng_seed = 1;
  int max_retries = 1000;
  std::string class_name = "Car";
};

struct SynthObject {
  ABBox3D box3d;
  Box2D box2d;      // tight projected bounds, clipped to the image
  LabelRecord label;
  Box2D unclipped;  // pre-clipping bounds, for truncation bookkeeping
};

namespace detail {

inline bool crosses_border(const Box2D& b, double w, double h) {
  return b.left() < 0.0 || b.top() < 0.0 || b.right() > w || b.bottom() > h;
}

}  // namespace detail

// Places n_objects random boxes visible to the camera, deterministically in
// the seed. Truncated objects (projection crossing the image border) are
// produced at the requested rate by aiming the projected center inside or
// outside a safe band and retrying until the crossing state matches.
inline std::vector<SynthObject> generate_scene(const SceneConfig& cfg,
                                               const CameraIntrinsics& k, double image_w,
                                               double image_h) {
  Rng rng(cfg.rng_seed);
  std::vector<SynthObject> out;
  for (int i = 0; i < cfg.n_objects; ++i) {
    bool want_truncated = rng.bernoulli(cfg.truncation_fraction);
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
      double z = rng.uniform(cfg.depth.lo, cfg.depth.hi);
      double h = rng.uniform(cfg.dim_h.lo, cfg.dim_h.hi);
      double w = rng.uniform(cfg.dim_w.lo, cfg.dim_w.hi);
      double l = rng.uniform(cfg.dim_l.lo, cfg.dim_l.hi);
      double yaw = rng.uniform(-cfg.yaw_range, cfg.yaw_range);
      double y = cfg.free_y ? rng.uniform(cfg.y_range.lo, cfg.y_range.hi) : cfg.ground_y;

      double u;
      if (want_truncated) {
        bool left_side = rng.bernoulli(0.5);
        u = left_side ? rng.uniform(-0.10 * image_w, 0.02 * image_w)
                      : rng.uniform(0.98 * image_w, 1.10 * image_w);
      } else {
        u = rng.uniform(0.10 * image_w, 0.90 * image_w);
      }
      double x = (u - k.px) * z / k.fx;

      ABBox3D box{{x, y, z}, h, w, l, wrap_angle(yaw)};
      Corners cam = corners_camera(box);
      double min_corner_z = cam[0].z;
      for (const auto& p : cam) min_corner_z = std::min(min_corner_z, p.z);
      if (min_corner_z < 0.5) continue;

      Box2D unclipped = projected_bounds(cam, k);
      double cl = std::max(0.0, unclipped.left());
      double ct = std::max(0.0, unclipped.top());
      double cr = std::min(image_w, unclipped.right());
      double cb = std::min(image_h, unclipped.bottom());
      if (cr - cl < 2.0 || cb - ct < 2.0) continue;  // (nearly) out of view
      Box2D clipped = Box2D::from_ltrb(cl, ct, cr, cb);
      if (detail::crosses_border(unclipped, image_w, image_h) != want_truncated) continue;

      bool clashes = false;
      for (const auto& prev : out) {
        if (norm(clipped.center - prev.box2d.center) <= cfg.min_center_separation ||
            iou_bev(box, prev.box3d) > 0.0) {
          clashes = true;
          break;
        }
      }
      if (clashes) continue;

      double truncation = 0.0;
      if (detail::crosses_border(unclipped, image_w, image_h))
        truncation = std::max(0.0, 1.0 - clipped.area() / std::max(unclipped.area(), 1e-12));
      SynthObject obj;
      obj.box3d = box;
      obj.box2d = clipped;
      obj.unclipped = unclipped;
      obj.label = make_record(cfg.class_name, box, clipped, truncation, 0);
      out.push_back(obj);
      placed = true;
    }
    if (!placed)
      throw std::runtime_error("generate_scene: could not place object " + std::to_string(i) +
                               " after " + std::to_string(cfg.max_retries) +
                               " attempts (infeasible config)");
  }
  return out;
}

inline std::vector<GtBox> gt_boxes(const std::vector<SynthObject>& scene) {
  std::vector<GtBox> out;
  out.reserve(scene.size());
  for (const auto& o : scene) out.push_back({o.box3d, o.box2d});
  return out;
}

inline std::vector<LabelRecord> scene_labels(const std::vector<SynthObject>& scene) {
  std::vector<LabelRecord> out;
  out.reserve(scene.size());
  for (const auto& o : scene) out.push_back(o.label);
  return out;
}

// Calibration file content for a plain pinhole camera, in the 12-value P2
// row layout the parser consumes.
inline std::string calib_file_text(const CameraIntrinsics& k) {
  using detail::format_double;
  return "P2: " + format_double(k.fx) + " 0 " + format_double(k.px) + " 0 0 " +
         format_double(k.fy) + " " + format_double(k.py) + " 0 0 0 1 0\n";
}

// Per-channel Gaussian noise scales plus detection-level corruption. All
// scales zero and rates zero is the identity.
struct Perturbation {
  double sigma_logit = 0.0;     // confidence logits
  double sigma_b2d = 0.0;       // 2D box center offsets, pixels
  double sigma_b2d_size = 0.0;  // normalized 2D sizes
  double sigma_depth = 0.0;     // coarse depth, meters
  double sigma_zdelta = 0.0;    // depth refinement, meters
  double sigma_c2d = 0.0;       // projected-center offsets, pixels
  double sigma_c3d = 0.0;       // 3D center refinement, meters
  double sigma_corners = 0.0;   // local corner coordinates, meters
  double drop_rate = 0.0;       // probability an assigned cell is blanked
  double fp_rate = 0.0;         // expected spurious cells per frame
};

namespace detail {

inline double softmax_obj(double logit_bg, double logit_obj) {
  double m = logit_obj - logit_bg;
  if (m >= 0.0) return 1.0 / (1.0 + std::exp(-m));
  double e = std::exp(m);
  return e / (1.0 + e);
}

inline void blank_cell(CellTarget& c) { c = CellTarget{}; }

// A spurious detection's targets: internally consistent enough to decode
// into a plausible car-sized box with a sub-unity score.
inline void fill_false_positive(CellTarget& c, Rng& rng, const GridSpec& grid) {
  c.object_index = -1;
  double margin = rng.uniform(1.0, 6.0);
  c.logit_bg = -0.5 * margin;
  c.logit_obj = 0.5 * margin;
  c.pr_obj = softmax_obj(c.logit_bg, c.logit_obj);
  c.dxc = rng.uniform(-0.5 * grid.cell_w(), 0.5 * grid.cell_w());
  c.dyc = rng.uniform(-0.5 * grid.cell_h(), 0.5 * grid.cell_h());
  c.dxb = c.dxc;
  c.dyb = c.dyc;
  c.wn = rng.uniform(0.02, 0.12);
  c.hn = rng.uniform(0.04, 0.20);
  c.z_cc = rng.uniform(8.0, 60.0);
  c.dzc = 0.0;
  c.dC = {};
  double h = rng.uniform(1.3, 1.8);
  double w = rng.uniform(1.5, 1.9);
  double l = rng.uniform(3.2, 4.6);
  double theta = rng.uniform(-std::numbers::pi, std::numbers::pi);
  for (int kc = 0; kc < 8; ++kc) {
    Point3 p{kCornerSignX[kc] * 0.5 * l, kCornerSignY[kc] * 0.5 * h,
             kCornerSignZ[kc] * 0.5 * w};
    c.corners[kc] = rotate_y(p, theta);
  }
}

}  // namespace detail

// Applies noise to every assigned cell (in cell order), then drops cells,
// then injects false positives into unoccupied cells: deterministic in the
// seed. Channels with zero scale are left bit-identical, so the zero
// perturbation is the identity.
inline CellTargets perturb(const CellTargets& targets, const Perturbation& p, uint64_t seed) {
  CellTargets out = targets;
  Rng rng(seed);
  for (int i = 0; i < out.grid.n_cells(); ++i) {
    CellTarget& c = out.cells[i];
    if (c.object_index < 0) continue;
    if (p.sigma_logit > 0.0) {
      c.logit_bg += rng.gaussian(p.sigma_logit);
      c.logit_obj += rng.gaussian(p.sigma_logit);
      c.pr_obj = detail::softmax_obj(c.logit_bg, c.logit_obj);
    }
    if (p.sigma_b2d > 0.0) {
      c.dxb += rng.gaussian(p.sigma_b2d);
      c.dyb += rng.gaussian(p.sigma_b2d);
    }
    if (p.sigma_b2d_size > 0.0) {
      c.wn = std::max(1e-6, c.wn + rng.gaussian(p.sigma_b2d_size));
      c.hn = std::max(1e-6, c.hn + rng.gaussian(p.sigma_b2d_size));
    }
    if (p.sigma_depth > 0.0) c.z_cc = std::max(0.5, c.z_cc + rng.gaussian(p.sigma_depth));
    if (p.sigma_zdelta > 0.0) c.dzc += rng.gaussian(p.sigma_zdelta);
    if (p.sigma_c2d > 0.0) {
      c.dxc += rng.gaussian(p.sigma_c2d);
      c.dyc += rng.gaussian(p.sigma_c2d);
    }
    if (p.sigma_c3d > 0.0) {
      c.dC.x += rng.gaussian(p.sigma_c3d);
      c.dC.y += rng.gaussian(p.sigma_c3d);
      c.dC.z += rng.gaussian(p.sigma_c3d);
    }
    if (p.sigma_corners > 0.0) {
      for (auto& q : c.corners) {
        q.x += rng.gaussian(p.sigma_corners);
        q.y += rng.gaussian(p.sigma_corners);
        q.z += rng.gaussian(p.sigma_corners);
      }
    }
    if (p.drop_rate > 0.0 && rng.bernoulli(p.drop_rate)) detail::blank_cell(c);
  }
  if (p.fp_rate > 0.0) {
    int n_fp = rng.poisson(p.fp_rate);
    for (int f = 0; f < n_fp; ++f) {
      for (int attempt = 0; attempt < 64; ++attempt) {
        int cell = static_cast<int>(rng.next() % static_cast<uint64_t>(out.grid.n_cells()));
        if (out.cells[cell].pr_obj > 0.0) continue;
        detail::fill_false_positive(out.cells[cell], rng, out.grid);
        break;
      }
    }
  }
  return out;
}

}  // namespace mono3d
