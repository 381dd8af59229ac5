#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "mono3d/encoding.hpp"
#include "mono3d/eval.hpp"
#include "mono3d/kitti.hpp"
#include "mono3d/losses.hpp"

namespace mono3d {

inline constexpr int kReportSchemaVersion = 1;

// ---- loss reports ----------------------------------------------------------

inline nlohmann::json loss_report_to_json(const LossReport& r) {
  return nlohmann::json{{"schema_version", kReportSchemaVersion},
                        {"l_conf", r.l_conf},
                        {"l_bbox", r.l_bbox},
                        {"l_2d", r.l_2d},
                        {"l_zc", r.l_zc},
                        {"l_zdelta", r.l_zdelta},
                        {"l_depth", r.l_depth},
                        {"l_c2d", r.l_c2d},
                        {"l_c3d", r.l_c3d},
                        {"l_location", r.l_location},
                        {"l_corners", r.l_corners},
                        {"l_joint", r.l_joint},
                        {"total", r.total}};
}

namespace detail {

inline std::string pad(std::string s, size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

inline std::string render_rows(const std::vector<std::vector<std::string>>& rows) {
  std::vector<size_t> widths;
  for (const auto& row : rows) {
    if (widths.size() < row.size()) widths.resize(row.size(), 0);
    for (size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], row[i].size());
  }
  std::string out;
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) {
      out += i + 1 < row.size() ? pad(row[i], widths[i] + 2) : row[i];
    }
    out += '\n';
  }
  return out;
}

}  // namespace detail

inline std::string loss_report_table(const LossReport& r) {
  using detail::format_double;
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"term", "value"});
  auto add = [&](const char* name, double v) { rows.push_back({name, format_double(v)}); };
  add("l_conf", r.l_conf);
  add("l_bbox", r.l_bbox);
  add("l_2d", r.l_2d);
  add("l_zc", r.l_zc);
  add("l_zdelta", r.l_zdelta);
  add("l_depth", r.l_depth);
  add("l_c2d", r.l_c2d);
  add("l_c3d", r.l_c3d);
  add("l_location", r.l_location);
  add("l_corners", r.l_corners);
  add("l_joint", r.l_joint);
  add("total", r.total);
  return detail::render_rows(rows);
}

// ---- evaluation reports ----------------------------------------------------

inline nlohmann::json eval_report_to_json(const EvalReport& r) {
  nlohmann::json ap = nlohmann::json::array();
  for (const auto& e : r.ap) {
    nlohmann::json entry{{"regime", to_string(e.regime)},
                         {"iou", e.threshold},
                         {"mode", to_string(e.mode)},
                         {"n_gt", e.n_gt}};
    if (e.ap)
      entry["ap"] = *e.ap;
    else
      entry["ap"] = nullptr;
    ap.push_back(entry);
  }
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : r.loc_bins) {
    bins.push_back({{"lo", b.lo},
                    {"hi", b.hi},
                    {"n", b.n},
                    {"mean_abs_dx", b.mean_dx},
                    {"mean_abs_dy", b.mean_dy},
                    {"mean_abs_dz", b.mean_dz}});
  }
  return nlohmann::json{{"schema_version", kReportSchemaVersion},
                        {"ap", ap},
                        {"localization_bins", bins},
                        {"size_orientation",
                         {{"n", r.size_orient.n},
                          {"mean_abs_dh", r.size_orient.dh},
                          {"mean_abs_dw", r.size_orient.dw},
                          {"mean_abs_dl", r.size_orient.dl},
                          {"mean_abs_dyaw", r.size_orient.dyaw}}}};
}

inline DifficultyRegime regime_from_string(const std::string& s) {
  if (s == "easy") return DifficultyRegime::Easy;
  if (s == "moderate") return DifficultyRegime::Moderate;
  if (s == "hard") return DifficultyRegime::Hard;
  if (s == "ignored") return DifficultyRegime::Ignored;
  throw std::runtime_error("unknown difficulty regime '" + s + "'");
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  if (!j.contains("schema_version") || j["schema_version"].get<int>() != kReportSchemaVersion)
    throw std::runtime_error("eval report: missing or unsupported schema_version");
  EvalReport r;
  for (const auto& e : j.at("ap")) {
    ApEntry a;
    a.regime = regime_from_string(e.at("regime").get<std::string>());
    a.threshold = e.at("iou").get<double>();
    a.mode = e.at("mode").get<std::string>() == "bev" ? IouMode::BEV : IouMode::Full3D;
    a.n_gt = e.at("n_gt").get<long>();
    if (!e.at("ap").is_null()) a.ap = e.at("ap").get<double>();
    r.ap.push_back(a);
  }
  for (const auto& b : j.at("localization_bins")) {
    LocBinReport lb;
    lb.lo = b.at("lo").get<double>();
    lb.hi = b.at("hi").get<double>();
    lb.n = b.at("n").get<long>();
    lb.mean_dx = b.at("mean_abs_dx").get<double>();
    lb.mean_dy = b.at("mean_abs_dy").get<double>();
    lb.mean_dz = b.at("mean_abs_dz").get<double>();
    r.loc_bins.push_back(lb);
  }
  const auto& so = j.at("size_orientation");
  r.size_orient.n = so.at("n").get<long>();
  r.size_orient.dh = so.at("mean_abs_dh").get<double>();
  r.size_orient.dw = so.at("mean_abs_dw").get<double>();
  r.size_orient.dl = so.at("mean_abs_dl").get<double>();
  r.size_orient.dyaw = so.at("mean_abs_dyaw").get<double>();
  return r;
}

// Average precision as an aligned text table, one row per (mode, threshold),
// one column per regime present in the report.
inline std::string ap_table_text(const EvalReport& r) {
  using detail::format_double;
  std::vector<DifficultyRegime> regimes;
  std::vector<std::pair<IouMode, double>> combos;
  for (const auto& e : r.ap) {
    if (std::find(regimes.begin(), regimes.end(), e.regime) == regimes.end())
      regimes.push_back(e.regime);
    std::pair<IouMode, double> c{e.mode, e.threshold};
    if (std::find(combos.begin(), combos.end(), c) == combos.end()) combos.push_back(c);
  }
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"mode", "iou"};
  for (auto reg : regimes) header.push_back(to_string(reg));
  rows.push_back(header);
  for (const auto& [mode, thr] : combos) {
    std::vector<std::string> row{to_string(mode), format_double(thr)};
    for (auto reg : regimes) {
      std::string cell = "-";
      for (const auto& e : r.ap)
        if (e.mode == mode && e.threshold == thr && e.regime == reg)
          cell = e.ap ? format_double(*e.ap) : "-";
      row.push_back(cell);
    }
    rows.push_back(row);
  }
  return "average precision\n" + detail::render_rows(rows);
}

inline std::string size_orientation_table_text(const EvalReport& r) {
  using detail::format_double;
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"n", "mean_abs_dh", "mean_abs_dw", "mean_abs_dl", "mean_abs_dyaw"});
  rows.push_back({std::to_string(r.size_orient.n), format_double(r.size_orient.dh),
                  format_double(r.size_orient.dw), format_double(r.size_orient.dl),
                  format_double(r.size_orient.dyaw)});
  return "size / orientation errors (nearest ground truth)\n" + detail::render_rows(rows);
}

// Distance-binned localization errors as CSV, one row per 10 m bin.
inline std::string loc_bins_csv(const EvalReport& r) {
  using detail::format_double;
  std::string s = "bin_lo,bin_hi,n,mean_abs_dx,mean_abs_dy,mean_abs_dz\n";
  for (const auto& b : r.loc_bins) {
    s += format_double(b.lo) + "," + format_double(b.hi) + "," + std::to_string(b.n) + "," +
         format_double(b.mean_dx) + "," + format_double(b.mean_dy) + "," +
         format_double(b.mean_dz) + "\n";
  }
  return s;
}

inline std::string eval_report_text(const EvalReport& r) {
  std::string s = ap_table_text(r);
  s += "\n";
  s += size_orientation_table_text(r);
  if (!r.loc_bins.empty()) {
    s += "\nlocalization errors by distance\n";
    s += loc_bins_csv(r);
  }
  return s;
}

// ---- cell-target tables ----------------------------------------------------

inline nlohmann::json targets_to_json(const CellTargets& t) {
  nlohmann::json cells = nlohmann::json::array();
  for (int i = 0; i < t.grid.n_cells(); ++i) {
    const CellTarget& c = t.cells[i];
    nlohmann::json corners = nlohmann::json::array();
    for (const auto& p : c.corners) corners.push_back({p.x, p.y, p.z});
    cells.push_back({{"ix", i % t.grid.sx},
                     {"iy", i / t.grid.sx},
                     {"object_index", c.object_index},
                     {"pr_obj", c.pr_obj},
                     {"logit_bg", c.logit_bg},
                     {"logit_obj", c.logit_obj},
                     {"dxb", c.dxb},
                     {"dyb", c.dyb},
                     {"wn", c.wn},
                     {"hn", c.hn},
                     {"z_cc", c.z_cc},
                     {"dzc", c.dzc},
                     {"dxc", c.dxc},
                     {"dyc", c.dyc},
                     {"dCx", c.dC.x},
                     {"dCy", c.dC.y},
                     {"dCz", c.dC.z},
                     {"corners", corners}});
  }
  return nlohmann::json{{"schema_version", kReportSchemaVersion},
                        {"grid",
                         {{"image_w", t.grid.w},
                          {"image_h", t.grid.h},
                          {"sx", t.grid.sx},
                          {"sy", t.grid.sy},
                          {"sigma_scope", t.grid.sigma_scope}}},
                        {"cells", cells}};
}

inline CellTargets targets_from_json(const nlohmann::json& j) {
  if (!j.contains("schema_version") || j["schema_version"].get<int>() != kReportSchemaVersion)
    throw std::runtime_error("targets: missing or unsupported schema_version");
  CellTargets t;
  const auto& g = j.at("grid");
  t.grid.w = g.at("image_w").get<double>();
  t.grid.h = g.at("image_h").get<double>();
  t.grid.sx = g.at("sx").get<int>();
  t.grid.sy = g.at("sy").get<int>();
  t.grid.sigma_scope = g.at("sigma_scope").get<double>();
  if (t.grid.sx < 1 || t.grid.sy < 1) throw std::runtime_error("targets: invalid grid");
  t.cells.assign(t.grid.n_cells(), CellTarget{});
  for (const auto& e : j.at("cells")) {
    int ix = e.at("ix").get<int>();
    int iy = e.at("iy").get<int>();
    if (ix < 0 || ix >= t.grid.sx || iy < 0 || iy >= t.grid.sy)
      throw std::runtime_error("targets: cell index outside grid");
    CellTarget& c = t.cells[t.grid.index(ix, iy)];
    c.object_index = e.at("object_index").get<int>();
    c.pr_obj = e.at("pr_obj").get<double>();
    c.logit_bg = e.at("logit_bg").get<double>();
    c.logit_obj = e.at("logit_obj").get<double>();
    c.dxb = e.at("dxb").get<double>();
    c.dyb = e.at("dyb").get<double>();
    c.wn = e.at("wn").get<double>();
    c.hn = e.at("hn").get<double>();
    c.z_cc = e.at("z_cc").get<double>();
    c.dzc = e.at("dzc").get<double>();
    c.dxc = e.at("dxc").get<double>();
    c.dyc = e.at("dyc").get<double>();
    c.dC = {e.at("dCx").get<double>(), e.at("dCy").get<double>(), e.at("dCz").get<double>()};
    const auto& corners = e.at("corners");
    for (int ci = 0; ci < 8; ++ci) {
      c.corners[ci] = {corners.at(ci).at(0).get<double>(), corners.at(ci).at(1).get<double>(),
                       corners.at(ci).at(2).get<double>()};
    }
  }
  return t;
}

}  // namespace mono3d
