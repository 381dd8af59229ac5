#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mono3d/boxes.hpp"
#include "mono3d/encoding.hpp"
#include "mono3d/iou.hpp"
#include "mono3d/kitti.hpp"

namespace mono3d {

enum class IouMode { BEV, Full3D };
enum class Interpolation { ElevenPoint, FortyPoint };

inline const char* to_string(IouMode m) { return m == IouMode::BEV ? "bev" : "3d"; }

struct MatchConfig {
  double iou_threshold = 0.7;
  IouMode iou_mode = IouMode::Full3D;
  DifficultyRegime regime = DifficultyRegime::Moderate;
  Interpolation interpolation = Interpolation::ElevenPoint;
  std::string class_name = "Car";
  DifficultyThresholds thresholds{};
  double image_h = 375.0;        // vertical extent used for difficulty height
  double dontcare_overlap = 0.5;
};

inline double box_iou(const ABBox3D& a, const ABBox3D& b, IouMode mode) {
  return mode == IouMode::BEV ? iou_bev(a, b) : iou_3d(a, b);
}

enum class DetOutcome { TP, FP, Ignored };

struct FrameMatch {
  std::vector<DetOutcome> outcome;  // per detection, input order
  int n_valid_gt = 0;
};

// Greedy matching in descending score order. Ground truths of the evaluated
// class split into valid (regime at most the evaluated one) and ignored
// (stricter regimes): a detection is a TP when its best IoU against a still
// unmatched valid gt clears the threshold; otherwise it is excused (neither
// TP nor FP) when it overlaps an ignored gt at the threshold or a DontCare
// region at the 2D-overlap cutoff, and an FP only past all of that.
inline FrameMatch match_frame(const std::vector<DecodedDetection>& dets,
                              const std::vector<LabelRecord>& gts, const MatchConfig& cfg) {
  FrameMatch fm;
  fm.outcome.assign(dets.size(), DetOutcome::FP);

  std::vector<int> valid, ignored, dontcare;
  for (size_t i = 0; i < gts.size(); ++i) {
    if (gts[i].class_name == "DontCare") {
      dontcare.push_back(static_cast<int>(i));
      continue;
    }
    if (gts[i].class_name != cfg.class_name) continue;
    DifficultyRegime r = classify_difficulty(gts[i], cfg.image_h, cfg.thresholds);
    if (static_cast<int>(r) <= static_cast<int>(cfg.regime))
      valid.push_back(static_cast<int>(i));
    else
      ignored.push_back(static_cast<int>(i));
  }
  fm.n_valid_gt = static_cast<int>(valid.size());

  std::vector<int> order(dets.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return dets[a].score > dets[b].score; });

  std::vector<bool> gt_matched(gts.size(), false);
  for (int di : order) {
    const DecodedDetection& d = dets[di];
    double best = -1.0;
    int best_gt = -1;
    for (int gi : valid) {
      if (gt_matched[gi]) continue;
      double iou = box_iou(d.box3d, box3d_from_record(gts[gi]), cfg.iou_mode);
      if (iou > best) {
        best = iou;
        best_gt = gi;
      }
    }
    if (best_gt >= 0 && best >= cfg.iou_threshold) {
      gt_matched[best_gt] = true;
      fm.outcome[di] = DetOutcome::TP;
      continue;
    }
    bool excused = false;
    for (int gi : ignored) {
      if (box_iou(d.box3d, box3d_from_record(gts[gi]), cfg.iou_mode) >= cfg.iou_threshold) {
        excused = true;
        break;
      }
    }
    if (!excused && d.box2d.area() > 0.0) {
      for (int gi : dontcare) {
        Box2D dc = box2d_from_record(gts[gi]);
        if (intersection_area(d.box2d, dc) / d.box2d.area() >= cfg.dontcare_overlap) {
          excused = true;
          break;
        }
      }
    }
    fm.outcome[di] = excused ? DetOutcome::Ignored : DetOutcome::FP;
  }
  return fm;
}

struct PrSample {
  double score = 0.0;
  bool tp = false;
};

// Order-independent AP state: counted detections and the valid-gt total add
// and merge commutatively; the curve is only materialized in ap().
struct ApAccumulator {
  std::vector<PrSample> samples;
  long n_gt = 0;

  void add_frame(const std::vector<DecodedDetection>& dets,
                 const std::vector<LabelRecord>& gts, const MatchConfig& cfg) {
    FrameMatch fm = match_frame(dets, gts, cfg);
    n_gt += fm.n_valid_gt;
    for (size_t i = 0; i < dets.size(); ++i) {
      if (fm.outcome[i] == DetOutcome::Ignored) continue;
      samples.push_back({dets[i].score, fm.outcome[i] == DetOutcome::TP});
    }
  }

  void merge(const ApAccumulator& o) {
    samples.insert(samples.end(), o.samples.begin(), o.samples.end());
    n_gt += o.n_gt;
  }

  // Interpolated average precision. Samples sort by score descending with
  // TPs ahead of FPs at equal scores, which makes the result independent of
  // accumulation order. Absent when there is nothing to recall.
  std::optional<double> ap(Interpolation interp) const {
    if (n_gt == 0) return std::nullopt;
    std::vector<PrSample> s = samples;
    std::sort(s.begin(), s.end(), [](const PrSample& a, const PrSample& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.tp && !b.tp;
    });
    size_t n = s.size();
    std::vector<double> recall(n), prec_int(n);
    long tp = 0;
    for (size_t i = 0; i < n; ++i) {
      tp += s[i].tp ? 1 : 0;
      recall[i] = static_cast<double>(tp) / n_gt;
      prec_int[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    }
    for (size_t i = n; i-- > 1;) prec_int[i - 1] = std::max(prec_int[i - 1], prec_int[i]);

    int points = interp == Interpolation::ElevenPoint ? 11 : 40;
    double sum = 0.0;
    size_t idx = 0;
    for (int j = 0; j < points; ++j) {
      double r = interp == Interpolation::ElevenPoint ? j / 10.0 : (j + 1) / 40.0;
      while (idx < n && recall[idx] < r) ++idx;
      if (idx < n) sum += prec_int[idx];
    }
    return sum / points;
  }
};

inline std::optional<double> average_precision(const std::vector<DecodedDetection>& dets,
                                               const std::vector<LabelRecord>& gts,
                                               const MatchConfig& cfg) {
  ApAccumulator acc;
  acc.add_frame(dets, gts, cfg);
  return acc.ap(cfg.interpolation);
}

inline DecodedDetection detection_from_record(const LabelRecord& r) {
  DecodedDetection d;
  d.box3d = box3d_from_record(r);
  d.box2d = box2d_from_record(r);
  d.score = r.score.value_or(0.0);
  return d;
}

namespace detail {

// Index of the class-matching gt whose center is nearest the detection's.
inline int nearest_gt(const DecodedDetection& d, const std::vector<LabelRecord>& gts,
                      const std::string& class_name) {
  int best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < gts.size(); ++i) {
    if (gts[i].class_name != class_name) continue;
    Point3 c = center_from_kitti(gts[i].location, gts[i].h);
    Point3 delta = d.box3d.center - c;
    double d2 = delta.x * delta.x + delta.y * delta.y + delta.z * delta.z;
    if (d2 < best_d2) {
      best_d2 = d2;
      best = static_cast<int>(i);
    }
  }
  return best;
}

}  // namespace detail

// Distance-binned localization errors: every detection contributes its
// component-wise center error against its nearest ground truth, filed under
// the bin of that ground truth's camera distance.
struct LocalizationBins {
  double bin_width = 10.0;
  int n_bins = 10;  // covers [0, bin_width * n_bins)

  struct Bin {
    long n = 0;
    double sum_dx = 0.0, sum_dy = 0.0, sum_dz = 0.0;
  };
  std::vector<Bin> bins;

  LocalizationBins() : bins(n_bins) {}
  LocalizationBins(double width, int count) : bin_width(width), n_bins(count), bins(count) {}

  void add_frame(const std::vector<DecodedDetection>& dets,
                 const std::vector<LabelRecord>& gts, const std::string& class_name) {
    for (const auto& d : dets) {
      int gi = detail::nearest_gt(d, gts, class_name);
      if (gi < 0) continue;
      Point3 c = center_from_kitti(gts[gi].location, gts[gi].h);
      double dist = norm(c);
      if (dist >= bin_width * n_bins) continue;
      Bin& b = bins[static_cast<int>(dist / bin_width)];
      ++b.n;
      b.sum_dx += std::abs(d.box3d.center.x - c.x);
      b.sum_dy += std::abs(d.box3d.center.y - c.y);
      b.sum_dz += std::abs(d.box3d.center.z - c.z);
    }
  }

  void merge(const LocalizationBins& o) {
    for (int i = 0; i < n_bins && i < o.n_bins; ++i) {
      bins[i].n += o.bins[i].n;
      bins[i].sum_dx += o.bins[i].sum_dx;
      bins[i].sum_dy += o.bins[i].sum_dy;
      bins[i].sum_dz += o.bins[i].sum_dz;
    }
  }
};

struct LocBinReport {
  double lo = 0.0, hi = 0.0;
  long n = 0;
  double mean_dx = 0.0, mean_dy = 0.0, mean_dz = 0.0;
};

inline std::vector<LocBinReport> loc_bin_reports(const LocalizationBins& acc) {
  std::vector<LocBinReport> out(acc.n_bins);
  for (int i = 0; i < acc.n_bins; ++i) {
    const auto& b = acc.bins[i];
    out[i].lo = i * acc.bin_width;
    out[i].hi = (i + 1) * acc.bin_width;
    out[i].n = b.n;
    if (b.n > 0) {
      out[i].mean_dx = b.sum_dx / b.n;
      out[i].mean_dy = b.sum_dy / b.n;
      out[i].mean_dz = b.sum_dz / b.n;
    }
  }
  return out;
}

inline std::vector<LocBinReport> localization_errors(const std::vector<DecodedDetection>& dets,
                                                     const std::vector<LabelRecord>& gts,
                                                     double max_range = 100.0,
                                                     const std::string& class_name = "Car") {
  bool any_gt = false;
  for (const auto& g : gts) any_gt = any_gt || g.class_name == class_name;
  if (!any_gt) return {};
  LocalizationBins acc(10.0, std::max(1, static_cast<int>(std::ceil(max_range / 10.0))));
  acc.add_frame(dets, gts, class_name);
  return loc_bin_reports(acc);
}

// Mean absolute dimension and yaw errors under the same nearest-gt
// association. Yaw differences wrap, so opposite headings near the branch
// cut measure small, as an angle should.
struct SizeOrientationAccumulator {
  long n = 0;
  double sum_dh = 0.0, sum_dw = 0.0, sum_dl = 0.0, sum_dyaw = 0.0;

  void add_frame(const std::vector<DecodedDetection>& dets,
                 const std::vector<LabelRecord>& gts, const std::string& class_name) {
    for (const auto& d : dets) {
      int gi = detail::nearest_gt(d, gts, class_name);
      if (gi < 0) continue;
      const LabelRecord& g = gts[gi];
      ++n;
      sum_dh += std::abs(d.box3d.h - g.h);
      sum_dw += std::abs(d.box3d.w - g.w);
      sum_dl += std::abs(d.box3d.l - g.l);
      sum_dyaw += std::abs(wrap_angle(d.box3d.yaw - g.rotation_y));
    }
  }

  void merge(const SizeOrientationAccumulator& o) {
    n += o.n;
    sum_dh += o.sum_dh;
    sum_dw += o.sum_dw;
    sum_dl += o.sum_dl;
    sum_dyaw += o.sum_dyaw;
  }
};

struct SizeOrientationError {
  long n = 0;
  double dh = 0.0, dw = 0.0, dl = 0.0, dyaw = 0.0;
};

inline SizeOrientationError size_orientation_report(const SizeOrientationAccumulator& a) {
  SizeOrientationError e;
  e.n = a.n;
  if (a.n > 0) {
    e.dh = a.sum_dh / a.n;
    e.dw = a.sum_dw / a.n;
    e.dl = a.sum_dl / a.n;
    e.dyaw = a.sum_dyaw / a.n;
  }
  return e;
}

inline SizeOrientationError size_orientation_errors(const std::vector<DecodedDetection>& dets,
                                                    const std::vector<LabelRecord>& gts,
                                                    const std::string& class_name = "Car") {
  SizeOrientationAccumulator acc;
  acc.add_frame(dets, gts, class_name);
  return size_orientation_report(acc);
}

struct ApEntry {
  DifficultyRegime regime = DifficultyRegime::Moderate;
  double threshold = 0.7;
  IouMode mode = IouMode::Full3D;
  std::optional<double> ap;
  long n_gt = 0;
};

struct EvalReport {
  std::vector<ApEntry> ap;
  std::vector<LocBinReport> loc_bins;
  SizeOrientationError size_orient;
};

// Full evaluation over an AP grid of (regime x threshold x mode) plus the
// error metrics, as one mergeable unit so frames can be processed in any
// order (or on any worker) and combined.
struct EvalAccumulator {
  std::vector<MatchConfig> configs;
  std::vector<ApAccumulator> ap_accs;
  LocalizationBins loc;
  SizeOrientationAccumulator size_orient;
  std::string class_name = "Car";

  EvalAccumulator() = default;
  EvalAccumulator(const std::vector<DifficultyRegime>& regimes,
                  const std::vector<double>& thresholds, const std::vector<IouMode>& modes,
                  const MatchConfig& base, double max_range = 100.0)
      : loc(10.0, std::max(1, static_cast<int>(std::ceil(max_range / 10.0)))),
        class_name(base.class_name) {
    for (DifficultyRegime r : regimes)
      for (IouMode m : modes)
        for (double t : thresholds) {
          MatchConfig c = base;
          c.regime = r;
          c.iou_mode = m;
          c.iou_threshold = t;
          configs.push_back(c);
        }
    ap_accs.resize(configs.size());
  }

  void add_frame(const std::vector<DecodedDetection>& dets,
                 const std::vector<LabelRecord>& gts) {
    for (size_t i = 0; i < configs.size(); ++i) ap_accs[i].add_frame(dets, gts, configs[i]);
    loc.add_frame(dets, gts, class_name);
    size_orient.add_frame(dets, gts, class_name);
  }

  void merge(const EvalAccumulator& o) {
    for (size_t i = 0; i < ap_accs.size() && i < o.ap_accs.size(); ++i)
      ap_accs[i].merge(o.ap_accs[i]);
    loc.merge(o.loc);
    size_orient.merge(o.size_orient);
  }

  EvalReport report() const {
    EvalReport r;
    for (size_t i = 0; i < configs.size(); ++i) {
      ApEntry e;
      e.regime = configs[i].regime;
      e.threshold = configs[i].iou_threshold;
      e.mode = configs[i].iou_mode;
      e.ap = ap_accs[i].ap(configs[i].interpolation);
      e.n_gt = ap_accs[i].n_gt;
      r.ap.push_back(e);
    }
    r.loc_bins = loc_bin_reports(loc);
    r.size_orient = size_orientation_report(size_orient);
    return r;
  }
};

}  // namespace mono3d
