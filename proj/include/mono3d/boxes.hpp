#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "mono3d/geometry.hpp"

namespace mono3d {

// Axis-aligned 2D box, stored as center plus full side lengths, pixels.
struct Box2D {
  Point2 center;
  double w = 0.0;
  double h = 0.0;

  double left() const { return center.u - 0.5 * w; }
  double top() const { return center.v - 0.5 * h; }
  double right() const { return center.u + 0.5 * w; }
  double bottom() const { return center.v + 0.5 * h; }
  double area() const { return w * h; }

  static Box2D from_ltrb(double l, double t, double r, double b) {
    return {{0.5 * (l + r), 0.5 * (t + b)}, r - l, b - t};
  }
};

inline double intersection_area(const Box2D& a, const Box2D& b) {
  double w = std::min(a.right(), b.right()) - std::max(a.left(), b.left());
  double h = std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top());
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

inline double iou_2d(const Box2D& a, const Box2D& b) {
  double inter = intersection_area(a, b);
  double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// Amodal 3D bounding box: full physical extent of the object regardless of
// occlusion or truncation. `center` is the geometric center of the cuboid
// (not the bottom face), dimensions are metric, yaw rotates about the
// vertical (Y) axis in the camera frame.
struct ABBox3D {
  Point3 center;
  double h = 0.0;  // height (Y extent)
  double w = 0.0;  // width  (Z extent before rotation)
  double l = 0.0;  // length (X extent before rotation)
  double yaw = 0.0;
};

inline Point3 rotate_y(const Point3& p, double angle) {
  double c = std::cos(angle), s = std::sin(angle);
  return {c * p.x + s * p.z, p.y, -s * p.x + c * p.z};
}

// Horizontal bearing of a point as seen from the camera origin in bird's-eye
// view. Zero along the optical axis, positive to the right.
inline double azimuth(const Point3& p) {
  if (p.x == 0.0 && p.z == 0.0)
    throw std::domain_error("azimuth: undefined at the camera origin");
  return std::atan2(p.x, p.z);
}

// Orientation of the box relative to the viewing ray through its center.
// This is the angle that remains observable from appearance alone: moving a
// box along its viewing ray keeps it constant while the global yaw changes.
inline double observation_angle(double yaw, const Point3& center) {
  return wrap_angle(yaw - azimuth(center));
}

inline double yaw_from_observation(double obs, const Point3& center) {
  return wrap_angle(obs + azimuth(center));
}

// Corner numbering, fixed everywhere: k = 0..3 is the top face (y = -h/2)
// with (x, z) signs (+,+), (+,-), (-,-), (-,+) scaled by (l/2, w/2);
// k = 4..7 repeats the pattern on the bottom face (y = +h/2).
inline constexpr std::array<double, 8> kCornerSignX = {+1, +1, -1, -1, +1, +1, -1, -1};
inline constexpr std::array<double, 8> kCornerSignY = {-1, -1, -1, -1, +1, +1, +1, +1};
inline constexpr std::array<double, 8> kCornerSignZ = {+1, -1, -1, +1, +1, -1, -1, +1};

using Corners = std::array<Point3, 8>;

// Corners in the object-local frame: origin at the box center, y down, and
// the z axis pointing from the camera to the box center in bird's-eye view.
// Within that frame the box is rotated by its observation angle, so the
// corner set is invariant to sliding the box along its viewing ray.
inline Corners corners_local(const ABBox3D& b) {
  double theta = observation_angle(b.yaw, b.center);
  Corners out;
  for (int k = 0; k < 8; ++k) {
    Point3 p{kCornerSignX[k] * 0.5 * b.l, kCornerSignY[k] * 0.5 * b.h,
             kCornerSignZ[k] * 0.5 * b.w};
    out[k] = rotate_y(p, theta);
  }
  return out;
}

// Maps local-frame corners to the camera frame given the box center the
// local frame is anchored to. Inverse of camera_to_local.
inline Corners local_to_camera(const Corners& local, const Point3& center) {
  double az = azimuth(center);
  Corners out;
  for (int k = 0; k < 8; ++k) out[k] = rotate_y(local[k], az) + center;
  return out;
}

inline Corners camera_to_local(const Corners& cam, const Point3& center) {
  double az = azimuth(center);
  Corners out;
  for (int k = 0; k < 8; ++k) out[k] = rotate_y(cam[k] - center, -az);
  return out;
}

inline Corners corners_camera(const ABBox3D& b) {
  return local_to_camera(corners_local(b), b.center);
}

struct Dimensions {
  double h = 0.0;
  double w = 0.0;
  double l = 0.0;
};

// Least-squares reading of a corner set that may carry noise. The center is
// the corner mean; each dimension is the mean length of its four parallel
// edges; `angle` is the rotation about Y of the mean length-edge direction
// (the observation angle for local-frame corners, the yaw for camera-frame
// ones); `rms` is the residual against the reconstructed rigid box.
struct CornerFit {
  Point3 center;
  Dimensions dims;
  double angle = 0.0;
  double rms = 0.0;
};

inline CornerFit fit_box_corners(const Corners& c) {
  CornerFit f;
  Point3 sum{};
  for (const auto& p : c) sum = sum + p;
  f.center = (1.0 / 8.0) * sum;

  // Edge pairs (a, b) with c[a] - c[b] pointing along +x, +y, +z.
  static constexpr int ex[4][2] = {{0, 3}, {1, 2}, {4, 7}, {5, 6}};
  static constexpr int ey[4][2] = {{4, 0}, {5, 1}, {6, 2}, {7, 3}};
  static constexpr int ez[4][2] = {{0, 1}, {3, 2}, {4, 5}, {7, 6}};
  Point3 vx{}, vy{}, vz{};
  for (int i = 0; i < 4; ++i) {
    vx = vx + (c[ex[i][0]] - c[ex[i][1]]);
    vy = vy + (c[ey[i][0]] - c[ey[i][1]]);
    vz = vz + (c[ez[i][0]] - c[ez[i][1]]);
  }
  vx = 0.25 * vx;
  vy = 0.25 * vy;
  vz = 0.25 * vz;
  f.dims.l = norm(vx);
  f.dims.h = norm(vy);
  f.dims.w = norm(vz);
  f.angle = (f.dims.l > 0.0) ? std::atan2(-vx.z, vx.x) : 0.0;

  double se = 0.0;
  for (int k = 0; k < 8; ++k) {
    Point3 ideal{kCornerSignX[k] * 0.5 * f.dims.l, kCornerSignY[k] * 0.5 * f.dims.h,
                 kCornerSignZ[k] * 0.5 * f.dims.w};
    Point3 r = c[k] - (rotate_y(ideal, f.angle) + f.center);
    se += r.x * r.x + r.y * r.y + r.z * r.z;
  }
  f.rms = std::sqrt(se / 8.0);
  return f;
}

// Strict variant: requires the corners to form a rigid box with a vertical
// axis, up to `tol` (meters of residual per corner, rms). Throws otherwise.
inline Dimensions size_from_corners(const Corners& c, double tol = 1e-6) {
  CornerFit f = fit_box_corners(c);
  double scale = std::max({1.0, f.dims.h, f.dims.w, f.dims.l});
  if (!(f.rms <= tol * scale))
    throw std::invalid_argument("size_from_corners: corners do not form a rigid box");
  for (int k = 0; k < 8; ++k)
    if (std::abs((c[k].y - f.center.y) - kCornerSignY[k] * 0.5 * f.dims.h) > tol * scale)
      throw std::invalid_argument("size_from_corners: box axis is not vertical");
  return f.dims;
}

// Rebuilds a full 3D box from local-frame corners and the center they are
// anchored to. The fitted in-frame angle is the observation angle, so the
// global yaw follows from the center's azimuth.
inline ABBox3D box_from_local_corners(const Corners& local, const Point3& center) {
  CornerFit f = fit_box_corners(local);
  ABBox3D b;
  b.center = center;
  b.h = f.dims.h;
  b.w = f.dims.w;
  b.l = f.dims.l;
  b.yaw = yaw_from_observation(f.angle, center);
  return b;
}

// Image-plane bounds of the projected corners (not clipped to the image).
inline Box2D projected_bounds(const Corners& cam, const CameraIntrinsics& k) {
  double l = 1e300, t = 1e300, r = -1e300, b = -1e300;
  for (const auto& p : cam) {
    Point2 q = project(p, k);
    l = std::min(l, q.u);
    t = std::min(t, q.v);
    r = std::max(r, q.u);
    b = std::max(b, q.v);
  }
  return Box2D::from_ltrb(l, t, r, b);
}

}  // namespace mono3d
