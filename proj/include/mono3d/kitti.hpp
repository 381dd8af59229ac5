#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "mono3d/boxes.hpp"
#include "mono3d/geometry.hpp"

namespace mono3d {

// One object annotation in KITTI label format. Field order in the file:
// class truncation occlusion alpha bbox(l t r b) dims(h w l) location(x y z)
// rotation_y [score]. `location` is the center of the bottom face, with Y
// pointing down; sentinel values (-1, -10, -1000) appear on DontCare lines
// and are preserved as-is.
struct LabelRecord {
  std::string class_name;
  double truncation = 0.0;
  int occlusion = 0;
  double alpha = 0.0;
  double left = 0.0, top = 0.0, right = 0.0, bottom = 0.0;
  double h = 0.0, w = 0.0, l = 0.0;
  Point3 location;
  double rotation_y = 0.0;
  std::optional<double> score;
};

enum class DifficultyRegime { Easy = 0, Moderate = 1, Hard = 2, Ignored = 3 };

inline const char* to_string(DifficultyRegime r) {
  switch (r) {
    case DifficultyRegime::Easy: return "easy";
    case DifficultyRegime::Moderate: return "moderate";
    case DifficultyRegime::Hard: return "hard";
    default: return "ignored";
  }
}

// One admission band: minimum 2D box height in pixels, maximum occlusion
// level, maximum truncation fraction.
struct DifficultyBand {
  double min_height = 0.0;
  int max_occlusion = 0;
  double max_truncation = 0.0;
};

struct DifficultyThresholds {
  DifficultyBand easy{40.0, 0, 0.15};
  DifficultyBand moderate{25.0, 1, 0.30};
  DifficultyBand hard{25.0, 2, 0.50};
};

namespace detail {

inline double parse_double_field(std::string_view s, int line_no) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw std::runtime_error("label parse error at line " + std::to_string(line_no) +
                             ": non-numeric field '" + std::string(s) + "'");
  return v;
}

inline int parse_int_field(std::string_view s, int line_no) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw std::runtime_error("label parse error at line " + std::to_string(line_no) +
                             ": non-integer field '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

// Shortest decimal form that parses back to the identical double.
inline std::string format_double(double v) {
  std::array<char, 32> buf;
  auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), p);
}

}  // namespace detail

inline std::vector<LabelRecord> parse_label_file(std::string_view text) {
  std::vector<LabelRecord> out;
  int line_no = 0;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos
                                                                          : nl - pos);
    pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
    ++line_no;
    auto f = detail::split_ws(line);
    if (f.empty()) continue;
    if (f.size() != 15 && f.size() != 16)
      throw std::runtime_error("label parse error at line " + std::to_string(line_no) +
                               ": expected 15 or 16 fields, got " + std::to_string(f.size()));
    LabelRecord r;
    r.class_name = std::string(f[0]);
    r.truncation = detail::parse_double_field(f[1], line_no);
    r.occlusion = detail::parse_int_field(f[2], line_no);
    r.alpha = detail::parse_double_field(f[3], line_no);
    r.left = detail::parse_double_field(f[4], line_no);
    r.top = detail::parse_double_field(f[5], line_no);
    r.right = detail::parse_double_field(f[6], line_no);
    r.bottom = detail::parse_double_field(f[7], line_no);
    r.h = detail::parse_double_field(f[8], line_no);
    r.w = detail::parse_double_field(f[9], line_no);
    r.l = detail::parse_double_field(f[10], line_no);
    r.location.x = detail::parse_double_field(f[11], line_no);
    r.location.y = detail::parse_double_field(f[12], line_no);
    r.location.z = detail::parse_double_field(f[13], line_no);
    r.rotation_y = detail::parse_double_field(f[14], line_no);
    if (f.size() == 16) r.score = detail::parse_double_field(f[15], line_no);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string serialize_label_line(const LabelRecord& r) {
  using detail::format_double;
  std::string s = r.class_name;
  s += " " + format_double(r.truncation);
  s += " " + std::to_string(r.occlusion);
  for (double v : {r.alpha, r.left, r.top, r.right, r.bottom, r.h, r.w, r.l,
                   r.location.x, r.location.y, r.location.z, r.rotation_y})
    s += " " + format_double(v);
  if (r.score) s += " " + format_double(*r.score);
  return s;
}

inline std::string serialize_label_file(const std::vector<LabelRecord>& recs) {
  std::string s;
  for (const auto& r : recs) {
    s += serialize_label_line(r);
    s += '\n';
  }
  return s;
}

// Calibration data reduced to what projection needs: the pinhole intrinsics
// from P2's upper-left block, plus P2's fourth column for the exact mode.
struct CalibData {
  CameraIntrinsics intrinsics;
  Point3 t;  // (P2[0][3], P2[1][3], P2[2][3])
};

inline CalibData parse_calib_file(std::string_view text) {
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos
                                                                          : nl - pos);
    pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
    auto f = detail::split_ws(line);
    if (f.empty()) continue;
    if (f[0] != "P2:" && f[0] != "P2") continue;
    if (f.size() != 13)
      throw std::runtime_error("calib parse error: P2 row has " + std::to_string(f.size() - 1) +
                               " values, expected 12");
    std::array<double, 12> p;
    for (int i = 0; i < 12; ++i) p[i] = detail::parse_double_field(f[i + 1], 0);
    CalibData c;
    c.intrinsics = {p[0], p[5], p[2], p[6]};
    c.t = {p[3], p[7], p[11]};
    return c;
  }
  throw std::runtime_error("calib parse error: no P2 row found");
}

// Full homogeneous projection through P2, including its translation column.
// Differs from project() by the small rectification offsets KITTI bakes into
// the fourth column; use it when matching external fixtures bit-for-bit.
inline Point2 project_p2_exact(const Point3& p, const CalibData& c) {
  double zh = p.z + c.t.z;
  if (!(zh > 0.0))
    throw std::domain_error("project_p2_exact: point not in front of camera");
  return {(c.intrinsics.fx * p.x + c.intrinsics.px * p.z + c.t.x) / zh,
          (c.intrinsics.fy * p.y + c.intrinsics.py * p.z + c.t.y) / zh};
}

// KITTI stores the bottom-face center; the geometric center sits half a
// height above it (Y points down, so above means smaller Y).
inline Point3 center_from_kitti(const Point3& location, double h) {
  return {location.x, location.y - 0.5 * h, location.z};
}

inline Point3 kitti_from_center(const Point3& center, double h) {
  return {center.x, center.y + 0.5 * h, center.z};
}

inline ABBox3D box3d_from_record(const LabelRecord& r) {
  return {center_from_kitti(r.location, r.h), r.h, r.w, r.l, r.rotation_y};
}

inline Box2D box2d_from_record(const LabelRecord& r) {
  return Box2D::from_ltrb(r.left, r.top, r.right, r.bottom);
}

// Builds an annotation (or, with a score, a detection) from domain boxes.
// Alpha follows the KITTI definition: yaw minus the bearing of the object.
inline LabelRecord make_record(const std::string& class_name, const ABBox3D& b3,
                               const Box2D& b2, double truncation = 0.0, int occlusion = 0,
                               std::optional<double> score = std::nullopt) {
  LabelRecord r;
  r.class_name = class_name;
  r.truncation = truncation;
  r.occlusion = occlusion;
  r.alpha = observation_angle(b3.yaw, b3.center);
  r.left = b2.left();
  r.top = b2.top();
  r.right = b2.right();
  r.bottom = b2.bottom();
  r.h = b3.h;
  r.w = b3.w;
  r.l = b3.l;
  r.location = kitti_from_center(b3.center, b3.h);
  r.rotation_y = b3.yaw;
  r.score = score;
  return r;
}

// Height of the 2D box after clamping to the image's vertical extent, the
// quantity the difficulty bands gate on.
inline double visible_box_height(const LabelRecord& r, double image_h) {
  double t = std::clamp(r.top, 0.0, image_h);
  double b = std::clamp(r.bottom, 0.0, image_h);
  return std::max(0.0, b - t);
}

inline DifficultyRegime classify_difficulty(const LabelRecord& r, double image_h,
                                            const DifficultyThresholds& th = {}) {
  double height = visible_box_height(r, image_h);
  auto fits = [&](const DifficultyBand& b) {
    return height >= b.min_height && r.occlusion <= b.max_occlusion &&
           r.truncation <= b.max_truncation && r.occlusion >= 0;
  };
  if (fits(th.easy)) return DifficultyRegime::Easy;
  if (fits(th.moderate)) return DifficultyRegime::Moderate;
  if (fits(th.hard)) return DifficultyRegime::Hard;
  return DifficultyRegime::Ignored;
}

}  // namespace mono3d
