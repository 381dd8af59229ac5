#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mono3d/boxes.hpp"

namespace mono3d {

// Ground-plane point for bird's-eye-view footprints (camera X-Z plane).
struct GroundPoint {
  double x = 0.0;
  double z = 0.0;
};

using Footprint = std::vector<GroundPoint>;

// The four ground-plane corners of a box, counter-clockwise when viewed with
// X to the right and Z up (the orientation the shoelace sum assumes).
inline Footprint bev_footprint(const ABBox3D& b) {
  static constexpr double sx[4] = {+1, -1, -1, +1};
  static constexpr double sz[4] = {+1, +1, -1, -1};
  double c = std::cos(b.yaw), s = std::sin(b.yaw);
  Footprint f(4);
  for (int i = 0; i < 4; ++i) {
    double lx = sx[i] * 0.5 * b.l, lz = sz[i] * 0.5 * b.w;
    f[i] = {c * lx + s * lz + b.center.x, -s * lx + c * lz + b.center.z};
  }
  return f;
}

namespace detail {

inline constexpr double kCollinearEps = 1e-12;

inline double cross(const GroundPoint& o, const GroundPoint& a, const GroundPoint& b) {
  return (a.x - o.x) * (b.z - o.z) - (a.z - o.z) * (b.x - o.x);
}

inline GroundPoint line_intersection(const GroundPoint& a, const GroundPoint& b,
                                     const GroundPoint& p, const GroundPoint& q) {
  double a1 = b.z - a.z, b1 = a.x - b.x, c1 = a1 * a.x + b1 * a.z;
  double a2 = q.z - p.z, b2 = p.x - q.x, c2 = a2 * p.x + b2 * p.z;
  double det = a1 * b2 - a2 * b1;
  if (std::abs(det) < kCollinearEps) return b;  // parallel within tolerance
  return {(b2 * c1 - b1 * c2) / det, (a1 * c2 - a2 * c1) / det};
}

}  // namespace detail

// Sutherland-Hodgman clipping of a convex subject polygon against a convex,
// counter-clockwise clip polygon. Points on a clip edge count as inside
// (collinearity tolerance 1e-12), so shared edges survive exactly.
inline Footprint clip_convex(const Footprint& subject, const Footprint& clip) {
  Footprint out = subject;
  size_t n = clip.size();
  for (size_t i = 0; i < n && !out.empty(); ++i) {
    const GroundPoint& a = clip[i];
    const GroundPoint& b = clip[(i + 1) % n];
    Footprint in;
    in.swap(out);
    size_t m = in.size();
    for (size_t j = 0; j < m; ++j) {
      const GroundPoint& cur = in[j];
      const GroundPoint& nxt = in[(j + 1) % m];
      bool cur_in = detail::cross(a, b, cur) >= -detail::kCollinearEps;
      bool nxt_in = detail::cross(a, b, nxt) >= -detail::kCollinearEps;
      if (cur_in) out.push_back(cur);
      if (cur_in != nxt_in) out.push_back(detail::line_intersection(cur, nxt, a, b));
    }
  }
  return out;
}

// Shoelace area; input may be in either winding, the result is unsigned.
inline double polygon_area(const Footprint& poly) {
  if (poly.size() < 3) return 0.0;
  double s = 0.0;
  for (size_t i = 0, n = poly.size(); i < n; ++i) {
    const GroundPoint& p = poly[i];
    const GroundPoint& q = poly[(i + 1) % n];
    s += p.x * q.z - q.x * p.z;
  }
  return 0.5 * std::abs(s);
}

inline double bev_intersection_area(const ABBox3D& a, const ABBox3D& b) {
  return polygon_area(clip_convex(bev_footprint(a), bev_footprint(b)));
}

// IoU of the yaw-rotated ground-plane rectangles. Areas on both sides of the
// ratio come from the same shoelace evaluation, so identical boxes give 1.
inline double iou_bev(const ABBox3D& a, const ABBox3D& b) {
  double inter = bev_intersection_area(a, b);
  double uni = polygon_area(bev_footprint(a)) + polygon_area(bev_footprint(b)) - inter;
  if (!(uni > 0.0)) return 0.0;
  double r = inter / uni;
  return std::clamp(r, 0.0, 1.0);
}

// Volumetric IoU for yaw-only boxes: the intersection is a prism, the BEV
// overlap extruded over the Y-extent overlap.
inline double iou_3d(const ABBox3D& a, const ABBox3D& b) {
  double y_lo = std::max(a.center.y - 0.5 * a.h, b.center.y - 0.5 * b.h);
  double y_hi = std::min(a.center.y + 0.5 * a.h, b.center.y + 0.5 * b.h);
  double y_overlap = std::max(0.0, y_hi - y_lo);
  double inter = bev_intersection_area(a, b) * y_overlap;
  double vol_a = polygon_area(bev_footprint(a)) * a.h;
  double vol_b = polygon_area(bev_footprint(b)) * b.h;
  double uni = vol_a + vol_b - inter;
  if (!(uni > 0.0)) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

}  // namespace mono3d
