// Command-line surface for the monocular 3D localization toolkit. Each
// pipeline stage is a subcommand that reads and writes plain files, so the
// stages compose with external tooling at every boundary:
//
//   synth     generate synthetic scenes (labels, calib, targets, detections)
//   parse     validate and normalize KITTI label or calib files
//   encode    labels + calib -> per-cell regression target tables
//   decode    target tables + calib -> KITTI detections with scores
//   losscheck compare predicted and ground-truth target tables
//   eval      detections vs ground truth: AP grid, error metrics
//   report    re-render a stored evaluation report
//   selftest  closed-loop invariant suite, deterministic in the seed

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "mono3d/mono3d.hpp"

namespace fs = std::filesystem;
using namespace mono3d;

namespace {

// ---------------------------------------------------------------------------
// shared options

struct Options {
  std::string grid;  // "SXxSY"; empty selects the stride-32 default
  double sigma_cells = 1.5;
  double omega = 10.0;
  double alpha = 10.0;
  double beta = 10.0;
  std::string iou_list = "0.3,0.5,0.7";
  int interp = 11;
  std::string mode = "both";
  int workers = 0;  // 0: use hardware concurrency
  uint64_t seed = 1;
  std::string format = "table";
  std::string image_size = "1242x375";
  std::string class_name = "Car";
  double score_threshold = 0.5;
  double max_range = 100.0;
  bool normalize = false;
};

std::pair<double, double> parse_size(const std::string& s) {
  size_t x = s.find('x');
  if (x == std::string::npos || x == 0 || x + 1 == s.size())
    throw std::runtime_error("expected WxH, got '" + s + "'");
  double w = std::stod(s.substr(0, x));
  double h = std::stod(s.substr(x + 1));
  if (!(w > 0.0) || !(h > 0.0)) throw std::runtime_error("image size must be positive");
  return {w, h};
}

std::pair<int, int> parse_grid_shape(const std::string& s) {
  size_t x = s.find('x');
  if (x == std::string::npos || x == 0 || x + 1 == s.size())
    throw std::runtime_error("expected SXxSY, got '" + s + "'");
  int sx = std::stoi(s.substr(0, x));
  int sy = std::stoi(s.substr(x + 1));
  if (sx < 1 || sy < 1) throw std::runtime_error("grid shape must be at least 1x1");
  return {sx, sy};
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  size_t i = 0;
  while (i <= s.size()) {
    size_t j = s.find(',', i);
    if (j == std::string::npos) j = s.size();
    std::string field = s.substr(i, j - i);
    if (!field.empty()) out.push_back(std::stod(field));
    i = j + 1;
  }
  if (out.empty()) throw std::runtime_error("expected a comma-separated number list");
  return out;
}

GridSpec make_grid(const Options& o) {
  auto [w, h] = parse_size(o.image_size);
  if (o.grid.empty()) return GridSpec::from_stride(w, h, 32.0, o.sigma_cells);
  auto [sx, sy] = parse_grid_shape(o.grid);
  GridSpec g{w, h, sx, sy, 0.0};
  g.sigma_scope = o.sigma_cells * std::max(g.cell_w(), g.cell_h());
  return g;
}

LossWeights make_weights(const Options& o) { return {o.omega, o.alpha, o.beta}; }

std::vector<IouMode> make_modes(const Options& o) {
  if (o.mode == "bev") return {IouMode::BEV};
  if (o.mode == "3d") return {IouMode::Full3D};
  return {IouMode::BEV, IouMode::Full3D};
}

int effective_workers(const Options& o) {
  if (o.workers > 0) return o.workers;
  unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

// ---------------------------------------------------------------------------
// file plumbing

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, std::string_view content) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw std::runtime_error("write failed for " + p.string());
}

std::vector<std::string> frame_stems(const fs::path& dir, const std::string& ext) {
  if (!fs::is_directory(dir))
    throw std::runtime_error(dir.string() + " is not a directory");
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ext)
      out.push_back(e.path().stem().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string frame_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d", index);
  return buf;
}

// Calibration source: a single file shared by all frames, or a directory
// with one file per frame stem.
struct CalibSource {
  bool per_frame = false;
  fs::path path;
  CalibData shared;

  static CalibSource open(const fs::path& p) {
    CalibSource s;
    s.path = p;
    s.per_frame = fs::is_directory(p);
    if (!s.per_frame) s.shared = parse_calib_file(read_file(p));
    return s;
  }

  CalibData load(const std::string& stem) const {
    if (!per_frame) return shared;
    return parse_calib_file(read_file(path / (stem + ".txt")));
  }
};

// Runs fn(frame_index) over [0, n) on a small thread pool. Results must be
// written to per-frame slots; any cross-frame reduction happens after this
// returns, in frame order, so the outcome is independent of the worker count.
void parallel_frames(int n, int workers, const std::function<void(int)>& fn) {
  workers = std::max(1, std::min(workers, n));
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr first_error;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      int i;
      while (!stop.load(std::memory_order_relaxed) && (i = next.fetch_add(1)) < n) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!first_error) first_error = std::current_exception();
          stop.store(true, std::memory_order_relaxed);
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::string join(const std::vector<std::string>& v, const char* sep) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += v[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// parse: validate and normalize KITTI files

int cmd_parse(const std::vector<std::string>& paths, const std::string& kind,
              const std::string& out_dir) {
  using detail::format_double;
  for (const auto& p : paths) {
    try {
      std::string text = read_file(p);
      if (kind == "calib") {
        CalibData c = parse_calib_file(text);
        std::cout << p << ": P2 fx=" << format_double(c.intrinsics.fx)
                  << " fy=" << format_double(c.intrinsics.fy)
                  << " px=" << format_double(c.intrinsics.px)
                  << " py=" << format_double(c.intrinsics.py) << "\n";
      } else {
        auto records = parse_label_file(text);
        std::cout << p << ": " << records.size() << " records\n";
        if (!out_dir.empty()) {
          fs::create_directories(out_dir);
          write_file(fs::path(out_dir) / fs::path(p).filename(),
                     serialize_label_file(records));
        }
      }
    } catch (const std::exception& e) {
      std::cerr << "error: " << p << ": " << e.what() << "\n";
      return 1;
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// encode: labels + calib -> target tables

int cmd_encode(const Options& opts, const std::string& labels_dir,
               const std::string& calib_path, const std::string& out_dir) {
  auto stems = frame_stems(labels_dir, ".txt");
  int n = static_cast<int>(stems.size());
  GridSpec grid = make_grid(opts);

  // Load and validate everything before writing anything, so a bad frame
  // cannot leave a partial output directory behind.
  std::vector<std::vector<LabelRecord>> labels(n);
  std::vector<CalibData> calibs(n);
  CalibSource calib = CalibSource::open(calib_path);
  parallel_frames(n, effective_workers(opts), [&](int i) {
    fs::path lp = fs::path(labels_dir) / (stems[i] + ".txt");
    try {
      labels[i] = parse_label_file(read_file(lp));
    } catch (const std::exception& e) {
      throw std::runtime_error(lp.string() + ": " + e.what());
    }
    try {
      calibs[i] = calib.load(stems[i]);
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string("calib for frame ") + stems[i] + ": " + e.what());
    }
  });

  fs::create_directories(out_dir);
  std::vector<long> objects(n, 0), assigned(n, 0);
  parallel_frames(n, effective_workers(opts), [&](int i) {
    std::vector<GtBox> gt;
    for (const auto& r : labels[i]) {
      if (r.class_name != opts.class_name) continue;
      gt.push_back({box3d_from_record(r), box2d_from_record(r)});
    }
    CellTargets t = encode(gt, calibs[i].intrinsics, grid);
    objects[i] = static_cast<long>(gt.size());
    assigned[i] = t.count_assigned();
    write_file(fs::path(out_dir) / (stems[i] + ".csv"), targets_to_csv(t));
  });

  long total_objects = 0, total_assigned = 0;
  for (int i = 0; i < n; ++i) {
    total_objects += objects[i];
    total_assigned += assigned[i];
  }
  std::cout << "frames=" << n << " objects=" << total_objects
            << " assigned_cells=" << total_assigned << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// decode: target tables + calib -> KITTI detections

int cmd_decode(const Options& opts, const std::string& targets_dir,
               const std::string& calib_path, const std::string& out_dir) {
  auto stems = frame_stems(targets_dir, ".csv");
  int n = static_cast<int>(stems.size());
  CalibSource calib = CalibSource::open(calib_path);

  fs::create_directories(out_dir);
  std::vector<long> dets(n, 0), discarded(n, 0);
  parallel_frames(n, effective_workers(opts), [&](int i) {
    fs::path tp = fs::path(targets_dir) / (stems[i] + ".csv");
    CellTargets t;
    try {
      t = targets_from_csv(read_file(tp));
    } catch (const std::exception& e) {
      throw std::runtime_error(tp.string() + ": " + e.what());
    }
    DecodeResult r = decode(t, calib.load(stems[i]).intrinsics, opts.score_threshold);
    std::vector<LabelRecord> records;
    records.reserve(r.detections.size());
    for (const auto& d : r.detections)
      records.push_back(make_record(opts.class_name, d.box3d, d.box2d, 0.0, 0, d.score));
    dets[i] = static_cast<long>(records.size());
    discarded[i] = r.discarded;
    write_file(fs::path(out_dir) / (stems[i] + ".txt"), serialize_label_file(records));
  });

  long total = 0, total_discarded = 0;
  for (int i = 0; i < n; ++i) {
    total += dets[i];
    total_discarded += discarded[i];
  }
  std::cout << "frames=" << n << " detections=" << total
            << " discarded=" << total_discarded << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// losscheck: predicted vs ground-truth target tables

std::string loss_report_csv(const LossReport& r, long n_frames) {
  using detail::format_double;
  std::string s =
      "l_conf,l_bbox,l_2d,l_zc,l_zdelta,l_depth,l_c2d,l_c3d,l_location,l_corners,"
      "l_joint,total,n_frames\n";
  for (double v : {r.l_conf, r.l_bbox, r.l_2d, r.l_zc, r.l_zdelta, r.l_depth, r.l_c2d,
                   r.l_c3d, r.l_location, r.l_corners, r.l_joint, r.total})
    s += format_double(v) + ",";
  s += std::to_string(n_frames) + "\n";
  return s;
}

int cmd_losscheck(const Options& opts, const std::string& pred_dir,
                  const std::string& gt_dir, const std::string& calib_path) {
  auto gt_stems = frame_stems(gt_dir, ".csv");
  auto pred_stems = frame_stems(pred_dir, ".csv");
  std::set<std::string> pred_set(pred_stems.begin(), pred_stems.end());
  std::vector<std::string> missing;
  for (const auto& s : gt_stems)
    if (!pred_set.count(s)) missing.push_back(s);
  if (!missing.empty())
    throw std::runtime_error("predicted targets missing for frames: " + join(missing, " "));

  int n = static_cast<int>(gt_stems.size());
  CalibSource calib = CalibSource::open(calib_path);
  LossWeights w = make_weights(opts);
  LossOptions lo{opts.normalize};

  std::vector<LossReport> reports(n);
  parallel_frames(n, effective_workers(opts), [&](int i) {
    CellTargets pred = targets_from_csv(read_file(fs::path(pred_dir) / (gt_stems[i] + ".csv")));
    CellTargets gt = targets_from_csv(read_file(fs::path(gt_dir) / (gt_stems[i] + ".csv")));
    reports[i] = evaluate_losses(pred, gt, calib.load(gt_stems[i]).intrinsics, w, lo);
  });

  LossAccumulator acc;
  for (const auto& r : reports) acc.add(r);
  LossReport mean = acc.mean();

  if (opts.format == "json") {
    nlohmann::json j{{"schema_version", kReportSchemaVersion},
                     {"n_frames", acc.n_frames},
                     {"mean_losses", loss_report_to_json(mean)}};
    std::cout << j.dump(2) << "\n";
  } else if (opts.format == "csv") {
    std::cout << loss_report_csv(mean, acc.n_frames);
  } else {
    std::cout << loss_report_table(mean);
    std::cout << "frames  " << acc.n_frames << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// eval: detections vs ground truth

int cmd_eval(const Options& opts, const std::string& dets_dir, const std::string& gt_dir,
             const std::string& out_prefix) {
  auto gt_stems = frame_stems(gt_dir, ".txt");
  auto det_stems = frame_stems(dets_dir, ".txt");
  int n = static_cast<int>(gt_stems.size());

  // An entirely empty detection directory means zero detections everywhere.
  // Partial coverage is a frame mismatch and refuses to evaluate.
  bool no_dets = det_stems.empty();
  if (!no_dets) {
    std::set<std::string> det_set(det_stems.begin(), det_stems.end());
    std::set<std::string> gt_set(gt_stems.begin(), gt_stems.end());
    std::vector<std::string> missing, extra;
    for (const auto& s : gt_stems)
      if (!det_set.count(s)) missing.push_back(s);
    for (const auto& s : det_stems)
      if (!gt_set.count(s)) extra.push_back(s);
    if (!missing.empty())
      throw std::runtime_error("detections missing for frames: " + join(missing, " "));
    if (!extra.empty())
      throw std::runtime_error("ground truth missing for frames: " + join(extra, " "));
  }

  MatchConfig base;
  base.class_name = opts.class_name;
  base.image_h = parse_size(opts.image_size).second;
  base.interpolation = opts.interp == 40 ? Interpolation::FortyPoint
                                         : Interpolation::ElevenPoint;
  std::vector<DifficultyRegime> regimes{DifficultyRegime::Easy, DifficultyRegime::Moderate,
                                        DifficultyRegime::Hard};
  EvalAccumulator prototype(regimes, parse_double_list(opts.iou_list), make_modes(opts),
                            base, opts.max_range);

  std::vector<EvalAccumulator> per_frame(n, prototype);
  parallel_frames(n, effective_workers(opts), [&](int i) {
    fs::path gp = fs::path(gt_dir) / (gt_stems[i] + ".txt");
    std::vector<LabelRecord> gts;
    try {
      gts = parse_label_file(read_file(gp));
    } catch (const std::exception& e) {
      throw std::runtime_error(gp.string() + ": " + e.what());
    }
    std::vector<DecodedDetection> dets;
    if (!no_dets) {
      fs::path dp = fs::path(dets_dir) / (gt_stems[i] + ".txt");
      std::vector<LabelRecord> drecs;
      try {
        drecs = parse_label_file(read_file(dp));
      } catch (const std::exception& e) {
        throw std::runtime_error(dp.string() + ": " + e.what());
      }
      for (const auto& r : drecs) {
        if (r.class_name != opts.class_name) continue;
        dets.push_back(detection_from_record(r));
      }
    }
    per_frame[i].add_frame(dets, gts);
  });

  EvalAccumulator total = prototype;
  for (const auto& acc : per_frame) total.merge(acc);
  EvalReport report = total.report();

  if (opts.format == "json")
    std::cout << eval_report_to_json(report).dump(2) << "\n";
  else if (opts.format == "csv")
    std::cout << loc_bins_csv(report);
  else
    std::cout << eval_report_text(report);

  if (!out_prefix.empty()) {
    fs::path prefix(out_prefix);
    if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
    write_file(out_prefix + ".json", eval_report_to_json(report).dump(2) + "\n");
    write_file(out_prefix + ".txt", eval_report_text(report));
    write_file(out_prefix + "_bins.csv", loc_bins_csv(report));
  }
  return 0;
}

// ---------------------------------------------------------------------------
// report: re-render a stored evaluation report

int cmd_report(const Options& opts, const std::string& in_path) {
  EvalReport r = eval_report_from_json(nlohmann::json::parse(read_file(in_path)));
  if (opts.format == "json")
    std::cout << eval_report_to_json(r).dump(2) << "\n";
  else if (opts.format == "csv")
    std::cout << loc_bins_csv(r);
  else
    std::cout << eval_report_text(r);
  return 0;
}

// ---------------------------------------------------------------------------
// synth: generate scenes and every downstream artifact

struct SynthFlags {
  int frames = 10;
  int objects = 4;
  double truncation = 0.0;
  bool free_y = false;
  double focal = 700.0;
  std::string out_dir;
  std::string targets_out;
  std::string perturbed_out;
  std::string dets_out;
  Perturbation pert;
};

int cmd_synth(const Options& opts, const SynthFlags& sf) {
  auto [w, h] = parse_size(opts.image_size);
  CameraIntrinsics k{sf.focal, sf.focal, 0.5 * w, 0.5 * h};
  GridSpec grid = make_grid(opts);

  fs::path root(sf.out_dir);
  fs::create_directories(root / "labels");
  fs::create_directories(root / "calib");
  if (!sf.targets_out.empty()) fs::create_directories(sf.targets_out);
  if (!sf.perturbed_out.empty()) fs::create_directories(sf.perturbed_out);
  if (!sf.dets_out.empty()) fs::create_directories(sf.dets_out);

  int n = sf.frames;
  std::vector<long> objects(n, 0), dets(n, 0);
  parallel_frames(n, effective_workers(opts), [&](int i) {
    SceneConfig cfg;
    cfg.n_objects = sf.objects;
    cfg.truncation_fraction = sf.truncation;
    cfg.free_y = sf.free_y;
    cfg.class_name = opts.class_name;
    cfg.rng_seed = derive_seed(opts.seed, static_cast<uint64_t>(i));
    auto scene = generate_scene(cfg, k, w, h);
    objects[i] = static_cast<long>(scene.size());

    std::string stem = frame_name(i);
    write_file(root / "labels" / (stem + ".txt"), serialize_label_file(scene_labels(scene)));
    write_file(root / "calib" / (stem + ".txt"), calib_file_text(k));

    if (sf.targets_out.empty() && sf.perturbed_out.empty() && sf.dets_out.empty()) return;
    CellTargets t = encode(gt_boxes(scene), k, grid);
    if (!sf.targets_out.empty())
      write_file(fs::path(sf.targets_out) / (stem + ".csv"), targets_to_csv(t));
    if (sf.perturbed_out.empty() && sf.dets_out.empty()) return;

    uint64_t pseed = derive_seed(opts.seed ^ 0x70657274757262ULL, static_cast<uint64_t>(i));
    CellTargets p = perturb(t, sf.pert, pseed);
    if (!sf.perturbed_out.empty())
      write_file(fs::path(sf.perturbed_out) / (stem + ".csv"), targets_to_csv(p));
    if (!sf.dets_out.empty()) {
      DecodeResult r = decode(p, k, opts.score_threshold);
      std::vector<LabelRecord> records;
      for (const auto& d : r.detections)
        records.push_back(make_record(opts.class_name, d.box3d, d.box2d, 0.0, 0, d.score));
      dets[i] = static_cast<long>(records.size());
      write_file(fs::path(sf.dets_out) / (stem + ".txt"), serialize_label_file(records));
    }
  });

  long total_objects = 0, total_dets = 0;
  for (int i = 0; i < n; ++i) {
    total_objects += objects[i];
    total_dets += dets[i];
  }
  std::cout << "frames=" << n << " objects=" << total_objects;
  if (!sf.dets_out.empty()) std::cout << " detections=" << total_dets;
  std::cout << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// selftest: closed-loop invariants, independent oracles where possible

namespace selfcheck {

struct Result {
  std::string name;
  bool pass = false;
  std::string note;
};

const CameraIntrinsics kCam{700.0, 700.0, 600.0, 180.0};
constexpr double kW = 1200.0, kH = 360.0;

bool inside_bev(const ABBox3D& b, double x, double z) {
  double dx = x - b.center.x, dz = z - b.center.z;
  double c = std::cos(b.yaw), s = std::sin(b.yaw);
  double lx = c * dx - s * dz;
  double lz = s * dx + c * dz;
  return std::abs(lx) <= 0.5 * b.l && std::abs(lz) <= 0.5 * b.w;
}

double mc_iou_bev(const ABBox3D& a, const ABBox3D& b, int samples, uint64_t seed) {
  double r = 0.5 * std::hypot(std::max(a.l, b.l), std::max(a.w, b.w));
  double x0 = std::min(a.center.x, b.center.x) - r, x1 = std::max(a.center.x, b.center.x) + r;
  double z0 = std::min(a.center.z, b.center.z) - r, z1 = std::max(a.center.z, b.center.z) + r;
  Rng rng(seed);
  long na = 0, nb = 0, nab = 0;
  for (int i = 0; i < samples; ++i) {
    double x = rng.uniform(x0, x1), z = rng.uniform(z0, z1);
    bool ia = inside_bev(a, x, z), ib = inside_bev(b, x, z);
    na += ia;
    nb += ib;
    nab += ia && ib;
  }
  long uni = na + nb - nab;
  return uni > 0 ? static_cast<double>(nab) / static_cast<double>(uni) : 0.0;
}

CellAssignment brute_force_assign(const std::vector<AssignmentCandidate>& objs,
                                  const GridSpec& g) {
  CellAssignment a;
  a.object_index.assign(g.n_cells(), -1);
  for (int cell = 0; cell < g.n_cells(); ++cell) {
    int best = -1;
    for (size_t i = 0; i < objs.size(); ++i) {
      if (norm(cell_center(cell, g) - objs[i].box2d.center) >= g.sigma_scope) continue;
      if (best < 0 || objs[i].depth < objs[best].depth) best = static_cast<int>(i);
    }
    a.object_index[cell] = best;
  }
  return a;
}

std::string fmt(double v) { return detail::format_double(v); }

Result projection_round_trip(uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int i = 0; i < 20000; ++i) {
    Point3 p{rng.uniform(-50.0, 50.0), rng.uniform(-5.0, 5.0), rng.uniform(0.5, 200.0)};
    Point3 q = backproject(project(p, kCam), p.z, kCam);
    worst = std::max({worst, std::abs(q.x - p.x), std::abs(q.y - p.y), std::abs(q.z - p.z)});
  }
  return {"projection-round-trip", worst < 1e-9, "max_residual=" + fmt(worst)};
}

Result rigid_frame_round_trip(uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0, worst_angle = 0.0;
  for (int i = 0; i < 2000; ++i) {
    ABBox3D b{{rng.uniform(-40.0, 40.0), rng.uniform(-3.0, 3.0), rng.uniform(1.0, 80.0)},
              rng.uniform(0.5, 3.0),
              rng.uniform(0.5, 3.0),
              rng.uniform(0.5, 6.0),
              rng.uniform(-std::numbers::pi, std::numbers::pi)};
    Corners local = corners_local(b);
    Corners back = camera_to_local(local_to_camera(local, b.center), b.center);
    for (int c = 0; c < 8; ++c) {
      worst = std::max({worst, std::abs(back[c].x - local[c].x),
                        std::abs(back[c].y - local[c].y), std::abs(back[c].z - local[c].z)});
    }
    double yaw_back = yaw_from_observation(observation_angle(b.yaw, b.center), b.center);
    worst_angle = std::max(worst_angle, std::abs(wrap_angle(yaw_back - b.yaw)));
  }
  return {"rigid-frame-round-trip", worst < 1e-9 && worst_angle < 1e-12,
          "max_residual=" + fmt(worst) + " max_angle=" + fmt(worst_angle)};
}

struct Loop {
  std::vector<std::vector<SynthObject>> scenes;
  std::vector<std::vector<DecodedDetection>> dets;
};

Loop run_loop(uint64_t seed, int frames) {
  Loop loop;
  GridSpec grid = GridSpec::from_stride(kW, kH);
  for (int i = 0; i < frames; ++i) {
    SceneConfig cfg;
    cfg.n_objects = 4;
    cfg.rng_seed = derive_seed(seed, static_cast<uint64_t>(i));
    auto scene = generate_scene(cfg, kCam, kW, kH);
    CellTargets t = encode(gt_boxes(scene), kCam, grid);
    loop.dets.push_back(decode(t, kCam, 0.5).detections);
    loop.scenes.push_back(std::move(scene));
  }
  return loop;
}

Result encode_decode_identity(const Loop& loop, bool inject_bug) {
  double worst = 0.0;
  bool counts_ok = true;
  for (size_t f = 0; f < loop.scenes.size(); ++f) {
    const auto& scene = loop.scenes[f];
    const auto& dets = loop.dets[f];
    counts_ok = counts_ok && dets.size() == scene.size();
    for (const auto& d : dets) {
      double best = 1e300;
      const SynthObject* match = nullptr;
      for (const auto& o : scene) {
        Point3 delta = d.box3d.center - o.box3d.center;
        double dist = std::abs(delta.x) + std::abs(delta.y) + std::abs(delta.z);
        if (dist < best) {
          best = dist;
          match = &o;
        }
      }
      if (!match) continue;
      worst = std::max(worst, best);
      Corners dc = corners_camera(d.box3d);
      Corners gc = corners_camera(match->box3d);
      for (int c = 0; c < 8; ++c) {
        worst = std::max({worst, std::abs(dc[c].x - gc[c].x), std::abs(dc[c].y - gc[c].y),
                          std::abs(dc[c].z - gc[c].z)});
      }
    }
  }
  if (inject_bug) worst += 1e-3;
  return {"encode-decode-identity", counts_ok && worst < 1e-6,
          std::string("counts=") + (counts_ok ? "ok" : "mismatch") +
              " max_error=" + fmt(worst)};
}

Result closed_loop_ap(const Loop& loop) {
  MatchConfig base;
  base.image_h = kH;
  EvalAccumulator acc({DifficultyRegime::Easy, DifficultyRegime::Moderate,
                       DifficultyRegime::Hard},
                      {0.7}, {IouMode::BEV, IouMode::Full3D}, base);
  for (size_t f = 0; f < loop.scenes.size(); ++f)
    acc.add_frame(loop.dets[f], scene_labels(loop.scenes[f]));
  EvalReport r = acc.report();
  bool ok = false, all = true;
  for (const auto& e : r.ap) {
    if (!e.ap) continue;
    ok = true;
    all = all && *e.ap == 1.0;
  }
  return {"closed-loop-average-precision", ok && all,
          all ? "ap=1 at iou 0.7 in both overlap modes" : "ap below 1"};
}

Result error_metrics_zero(const Loop& loop) {
  LocalizationBins loc;
  SizeOrientationAccumulator so;
  for (size_t f = 0; f < loop.scenes.size(); ++f) {
    auto labels = scene_labels(loop.scenes[f]);
    loc.add_frame(loop.dets[f], labels, "Car");
    so.add_frame(loop.dets[f], labels, "Car");
  }
  bool loc_zero = true;
  for (const auto& b : loc.bins)
    loc_zero = loc_zero && b.sum_dx == 0.0 && b.sum_dy == 0.0 && b.sum_dz == 0.0;
  SizeOrientationError e = size_orientation_report(so);
  double worst = std::max({e.dh, e.dw, e.dl, e.dyaw});
  return {"error-metrics-zero", loc_zero && worst <= 1e-12,
          std::string("localization=") + (loc_zero ? "exact-zero" : "nonzero") +
              " max_size_orientation=" + fmt(worst)};
}

Result iou_against_monte_carlo(uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    ABBox3D a{{rng.uniform(-2.0, 2.0), 0.0, rng.uniform(-2.0, 2.0)}, 1.0,
              rng.uniform(1.0, 3.0), rng.uniform(1.0, 5.0),
              rng.uniform(-std::numbers::pi, std::numbers::pi)};
    ABBox3D b{{rng.uniform(-2.0, 2.0), 0.0, rng.uniform(-2.0, 2.0)}, 1.0,
              rng.uniform(1.0, 3.0), rng.uniform(1.0, 5.0),
              rng.uniform(-std::numbers::pi, std::numbers::pi)};
    worst = std::max(worst, std::abs(iou_bev(a, b) - mc_iou_bev(a, b, 100000, seed + i)));
  }
  return {"overlap-vs-monte-carlo", worst < 0.02, "max_gap=" + fmt(worst)};
}

Result iou_exact_cases() {
  ABBox3D r{{-3.0, 0.0, 17.0}, 1.4, 1.7, 4.2, 0.83};
  bool identical = iou_bev(r, r) == 1.0 && iou_3d(r, r) == 1.0;
  ABBox3D ua{{0.0, 0.0, 0.0}, 1.0, 1.0, 1.0, 0.0};
  ABBox3D ub{{0.5, 0.0, 0.0}, 1.0, 1.0, 1.0, 0.0};
  bool half = std::abs(iou_bev(ua, ub) - 1.0 / 3.0) < 1e-12;
  ABBox3D touch{{1.0, 0.0, 0.0}, 1.0, 1.0, 1.0, 0.0};
  bool zero = iou_bev(ua, touch) == 0.0;
  return {"overlap-exact-cases", identical && half && zero,
          identical && half && zero ? "identical=1 half-overlap=1/3 touching=0" : "mismatch"};
}

Result assignment_against_brute_force(uint64_t seed) {
  Rng rng(seed);
  GridSpec grid = GridSpec::from_stride(kW, kH);
  long cells_checked = 0, disagreements = 0;
  for (int s = 0; s < 50; ++s) {
    std::vector<AssignmentCandidate> objs;
    int n = 1 + static_cast<int>(rng.next() % 6);
    for (int i = 0; i < n; ++i) {
      objs.push_back({{{rng.uniform(-50.0, kW + 50.0), rng.uniform(-50.0, kH + 50.0)},
                       rng.uniform(20.0, 120.0),
                       rng.uniform(20.0, 90.0)},
                      rng.uniform(1.0, 80.0)});
    }
    CellAssignment fast = assign(objs, grid);
    CellAssignment slow = brute_force_assign(objs, grid);
    for (int c = 0; c < grid.n_cells(); ++c) {
      ++cells_checked;
      disagreements += fast.object_index[c] != slow.object_index[c];
    }
  }
  return {"assignment-vs-brute-force", disagreements == 0,
          "cells=" + std::to_string(cells_checked) +
              " disagreements=" + std::to_string(disagreements)};
}

CellTargets fixture_targets(double x = 0.0) {
  GtBox g;
  double u = kCam.px + kCam.fx * x / 20.0;
  g.box3d = {{x, 0.0, 20.0}, 2.0, 1.5, 4.0, 0.0};
  g.box2d = {{u, 180.0}, 120.0, 45.0};
  return encode({g}, kCam, GridSpec{kW, kH, 1, 1, 2000.0});
}

Result loss_zero_at_ground_truth() {
  CellTargets gt = fixture_targets();
  LossReport r = evaluate_losses(gt, gt, kCam);
  bool ok = r.l_bbox == 0.0 && r.l_zc == 0.0 && r.l_zdelta == 0.0 && r.l_c2d == 0.0 &&
            r.l_c3d == 0.0 && r.l_corners == 0.0 && r.l_joint == 0.0 && r.l_conf < 1e-20;
  return {"loss-zero-at-ground-truth", ok, "total=" + fmt(r.total)};
}

Result loss_fixture_arithmetic() {
  CellTargets gt = fixture_targets();
  bool ok = true;

  CellTargets p = gt;
  p.cells[0].dxb += 1.0;
  p.cells[0].dyb -= 1.0;
  Loss2d l2 = loss_2d(p, gt, {});
  ok = ok && l2.l_bbox == 2.0 && l2.l_2d == l2.l_conf + 10.0 * l2.l_bbox;

  p = gt;
  p.cells[0].z_cc = 22.0;
  p.cells[0].dzc = -2.0;
  LossDepth ld = loss_depth(p, gt, {});
  ok = ok && ld.l_zc == 2.0 && ld.l_zdelta == 0.0 && ld.l_depth == 20.0;
  p.cells[0].z_cc = 21.0;
  p.cells[0].dzc = 0.0;
  ld = loss_depth(p, gt, {});
  ok = ok && ld.l_depth == 11.0;

  p = gt;
  p.cells[0].dxc += 5.0;
  LossLocation ll = loss_location(p, gt, kCam, {});
  ok = ok && ll.l_c2d == 5.0 && ll.l_c3d == 100.0 / 700.0 &&
       ll.l_location == 10.0 * ll.l_c2d + ll.l_c3d;

  p = gt;
  p.cells[0].dC.x += 0.1;
  ll = loss_location(p, gt, kCam, {});
  ok = ok && ll.l_c2d == 0.0 && ll.l_c3d == 0.1;

  p = gt;
  for (int c = 0; c < 8; ++c) p.cells[0].corners[c].x += 0.1;
  ok = ok && std::abs(loss_corners(p, gt) - 0.8) < 1e-12;

  p = gt;
  p.cells[0].dC.x += 0.2;
  ok = ok && std::abs(loss_joint(p, gt, kCam) - 1.6) < 1e-12;

  return {"loss-fixture-arithmetic", ok, ok ? "all hand values reproduced" : "mismatch"};
}

Result substitution_error_slope() {
  double worst = 0.0;
  for (double z : {10.0, 20.0, 40.0}) {
    ABBox3D gt{{1.0, 0.4, z}, 1.5, 1.6, 3.9, 0.2};
    Point2 proj = project(gt.center, kCam);
    double gap = 10.0;
    auto [ex, ey] = center_substitution_error(gt, {{proj.u + gap, proj.v}, 80.0, 60.0}, kCam);
    worst = std::max(worst, std::abs(ex / gap - z / kCam.fx));
  }
  return {"substitution-error-slope", worst < 1e-9, "max_slope_gap=" + fmt(worst)};
}

Result determinism(uint64_t seed) {
  SceneConfig cfg;
  cfg.n_objects = 5;
  cfg.rng_seed = derive_seed(seed, 77);
  std::string a = serialize_label_file(scene_labels(generate_scene(cfg, kCam, kW, kH)));
  std::string b = serialize_label_file(scene_labels(generate_scene(cfg, kCam, kW, kH)));

  CellTargets t = encode(gt_boxes(generate_scene(cfg, kCam, kW, kH)),
                         kCam, GridSpec::from_stride(kW, kH));
  Perturbation pert;
  pert.sigma_depth = 0.5;
  pert.sigma_corners = 0.02;
  std::string pa = targets_to_csv(perturb(t, pert, seed + 1));
  std::string pb = targets_to_csv(perturb(t, pert, seed + 1));
  bool ok = a == b && pa == pb;
  return {"determinism", ok, ok ? "scene and perturbation streams repeat exactly" : "drift"};
}

}  // namespace selfcheck

int cmd_selftest(uint64_t seed, int frames, bool inject_bug) {
  using namespace selfcheck;
  std::vector<Result> results;
  results.push_back(projection_round_trip(seed));
  results.push_back(rigid_frame_round_trip(seed + 1));
  Loop loop = run_loop(seed, frames);
  results.push_back(encode_decode_identity(loop, inject_bug));
  results.push_back(closed_loop_ap(loop));
  results.push_back(error_metrics_zero(loop));
  results.push_back(iou_against_monte_carlo(seed + 2));
  results.push_back(iou_exact_cases());
  results.push_back(assignment_against_brute_force(seed + 3));
  results.push_back(loss_zero_at_ground_truth());
  results.push_back(loss_fixture_arithmetic());
  results.push_back(substitution_error_slope());
  results.push_back(determinism(seed));

  int passed = 0;
  for (const auto& r : results) {
    std::cout << (r.pass ? "pass" : "FAIL") << "  " << r.name;
    if (!r.note.empty()) std::cout << "  " << r.note;
    std::cout << "\n";
    passed += r.pass;
  }
  std::cout << "selftest: " << passed << "/" << results.size() << " properties passed"
            << " seed=" << seed << " frames=" << frames << "\n";
  return passed == static_cast<int>(results.size()) ? 0 : 1;
}

}  // namespace

// ---------------------------------------------------------------------------

int main(int argc, char** argv) {
  CLI::App app{"monocular 3D localization toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config")->envname("MONO3D_CONFIG");

  Options opts;
  app.add_option("--grid", opts.grid, "grid shape SXxSY (default: 32 px stride)");
  app.add_option("--sigma-scope", opts.sigma_cells,
                 "assignment scope radius in multiples of the cell size")
      ->check(CLI::PositiveNumber);
  app.add_option("--omega", opts.omega, "2D box term weight");
  app.add_option("--alpha", opts.alpha, "coarse depth term weight");
  app.add_option("--beta", opts.beta, "projected center term weight");
  app.add_option("--iou", opts.iou_list, "comma-separated IoU thresholds for eval");
  app.add_option("--interp", opts.interp, "AP interpolation points")
      ->check(CLI::IsMember({11, 40}));
  app.add_option("--mode", opts.mode, "overlap mode for eval")
      ->check(CLI::IsMember({"bev", "3d", "both"}));
  app.add_option("--workers", opts.workers, "worker threads (0: hardware concurrency)")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--seed", opts.seed, "base random seed");
  app.add_option("--format", opts.format, "stdout format")
      ->check(CLI::IsMember({"json", "table", "csv"}));
  app.add_option("--image-size", opts.image_size, "image size WxH in pixels");
  app.add_option("--classes", opts.class_name, "object class to process");
  app.add_option("--score-threshold", opts.score_threshold,
                 "minimum confidence for decoded detections");
  app.add_option("--max-range", opts.max_range, "localization binning range in meters")
      ->check(CLI::PositiveNumber);
  app.add_flag("--normalize", opts.normalize, "divide masked loss sums by assigned cells");

  auto* c_parse = app.add_subcommand("parse", "validate and normalize KITTI files");
  c_parse->fallthrough();
  std::vector<std::string> parse_paths;
  std::string parse_kind = "labels", parse_out;
  c_parse->add_option("paths", parse_paths, "files to parse")->required();
  c_parse->add_option("--kind", parse_kind, "file kind")
      ->check(CLI::IsMember({"labels", "calib"}));
  c_parse->add_option("--out", parse_out, "directory for normalized copies");

  auto* c_encode = app.add_subcommand("encode", "labels + calib -> target tables");
  c_encode->fallthrough();
  std::string enc_labels, enc_calib, enc_out;
  c_encode->add_option("--labels", enc_labels, "label directory")->required();
  c_encode->add_option("--calib", enc_calib, "calib file or directory")->required();
  c_encode->add_option("--out", enc_out, "output directory for target tables")->required();

  auto* c_decode = app.add_subcommand("decode", "target tables + calib -> detections");
  c_decode->fallthrough();
  std::string dec_targets, dec_calib, dec_out;
  c_decode->add_option("--targets", dec_targets, "target table directory")->required();
  c_decode->add_option("--calib", dec_calib, "calib file or directory")->required();
  c_decode->add_option("--out", dec_out, "output directory for detections")->required();

  auto* c_loss = app.add_subcommand("losscheck", "compare target tables under the losses");
  c_loss->fallthrough();
  std::string loss_pred, loss_gt, loss_calib;
  c_loss->add_option("--pred", loss_pred, "predicted target directory")->required();
  c_loss->add_option("--gt", loss_gt, "ground-truth target directory")->required();
  c_loss->add_option("--calib", loss_calib, "calib file or directory")->required();

  auto* c_eval = app.add_subcommand("eval", "detections vs ground truth");
  c_eval->fallthrough();
  std::string eval_dets, eval_gt, eval_out;
  c_eval->add_option("--dets", eval_dets, "detection directory")->required();
  c_eval->add_option("--gt", eval_gt, "ground-truth label directory")->required();
  c_eval->add_option("--out", eval_out, "output prefix for .json/.txt/_bins.csv");

  auto* c_report = app.add_subcommand("report", "re-render a stored evaluation report");
  c_report->fallthrough();
  std::string report_in;
  c_report->add_option("--in", report_in, "evaluation report JSON")->required();

  auto* c_synth = app.add_subcommand("synth", "generate synthetic scenes");
  c_synth->fallthrough();
  SynthFlags sf;
  c_synth->add_option("--out", sf.out_dir, "output root (labels/, calib/)")->required();
  c_synth->add_option("--frames", sf.frames, "number of frames")->check(CLI::PositiveNumber);
  c_synth->add_option("--objects", sf.objects, "objects per frame")
      ->check(CLI::NonNegativeNumber);
  c_synth->add_option("--truncation", sf.truncation, "fraction of border-crossing objects")
      ->check(CLI::Range(0.0, 1.0));
  c_synth->add_flag("--free-y", sf.free_y, "sample vertical placement instead of flat ground");
  c_synth->add_option("--focal", sf.focal, "focal length in pixels")
      ->check(CLI::PositiveNumber);
  c_synth->add_option("--targets-out", sf.targets_out, "also write encoded target tables");
  c_synth->add_option("--perturbed-out", sf.perturbed_out,
                      "also write perturbed target tables");
  c_synth->add_option("--dets-out", sf.dets_out, "also write decoded detections");
  c_synth->add_option("--perturb-logit", sf.pert.sigma_logit, "confidence logit noise");
  c_synth->add_option("--perturb-b2d", sf.pert.sigma_b2d, "2D center noise, px");
  c_synth->add_option("--perturb-b2d-size", sf.pert.sigma_b2d_size, "2D size noise");
  c_synth->add_option("--perturb-depth", sf.pert.sigma_depth, "coarse depth noise, m");
  c_synth->add_option("--perturb-zdelta", sf.pert.sigma_zdelta, "depth refinement noise, m");
  c_synth->add_option("--perturb-c2d", sf.pert.sigma_c2d, "projected center noise, px");
  c_synth->add_option("--perturb-c3d", sf.pert.sigma_c3d, "center refinement noise, m");
  c_synth->add_option("--perturb-corners", sf.pert.sigma_corners, "corner noise, m");
  c_synth->add_option("--drop-rate", sf.pert.drop_rate, "probability a cell is blanked")
      ->check(CLI::Range(0.0, 1.0));
  c_synth->add_option("--fp-rate", sf.pert.fp_rate, "expected spurious cells per frame")
      ->check(CLI::NonNegativeNumber);

  auto* c_selftest = app.add_subcommand("selftest", "closed-loop invariant suite");
  c_selftest->fallthrough();
  int selftest_frames = 100;
  bool inject_bug = false;
  c_selftest->add_option("--frames", selftest_frames, "synthetic frames to loop through")
      ->check(CLI::PositiveNumber);
  c_selftest->add_flag("--inject-bug", inject_bug, "")->group("");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*c_parse) return cmd_parse(parse_paths, parse_kind, parse_out);
    if (*c_encode) return cmd_encode(opts, enc_labels, enc_calib, enc_out);
    if (*c_decode) return cmd_decode(opts, dec_targets, dec_calib, dec_out);
    if (*c_loss) return cmd_losscheck(opts, loss_pred, loss_gt, loss_calib);
    if (*c_eval) return cmd_eval(opts, eval_dets, eval_gt, eval_out);
    if (*c_report) return cmd_report(opts, report_in);
    if (*c_synth) return cmd_synth(opts, sf);
    if (*c_selftest) return cmd_selftest(opts.seed, selftest_frames, inject_bug);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
