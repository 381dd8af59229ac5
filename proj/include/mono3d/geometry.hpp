#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mono3d {

// Camera frame convention throughout: X right, Y down, Z forward along the
// optical axis. Units are meters in 3D and pixels in the image plane.
struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

struct Point2 {
  double u = 0.0;
  double v = 0.0;
};

inline Point3 operator+(const Point3& a, const Point3& b) {
  return {a.x + b.x, a.y + b.y, a.z + b.z};
}
inline Point3 operator-(const Point3& a, const Point3& b) {
  return {a.x - b.x, a.y - b.y, a.z - b.z};
}
inline Point3 operator*(double s, const Point3& p) {
  return {s * p.x, s * p.y, s * p.z};
}
inline Point2 operator+(const Point2& a, const Point2& b) {
  return {a.u + b.u, a.v + b.v};
}
inline Point2 operator-(const Point2& a, const Point2& b) {
  return {a.u - b.u, a.v - b.v};
}

inline double norm(const Point3& p) {
  return std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
}
inline double norm(const Point2& p) { return std::hypot(p.u, p.v); }

// Rectified pinhole intrinsics; skew and lens distortion are assumed to have
// been removed upstream.
struct CameraIntrinsics {
  double fx = 1.0;  // focal length, pixels
  double fy = 1.0;
  double px = 0.0;  // principal point
  double py = 0.0;
};

// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double pi = std::numbers::pi;
  a = std::fmod(a, 2.0 * pi);
  if (a <= -pi)
    a += 2.0 * pi;
  else if (a > pi)
    a -= 2.0 * pi;
  return a;
}

// Perspective projection of a camera-frame point onto the image plane.
// Points at or behind the camera have no image; that is a caller error.
inline Point2 project(const Point3& p, const CameraIntrinsics& k) {
  if (!(p.z > 0.0))
    throw std::domain_error("project: point not in front of camera (Z <= 0)");
  return {k.fx * p.x / p.z + k.px, k.fy * p.y / p.z + k.py};
}

// Inverse of project at a known depth: recovers the camera-frame point whose
// image is `x` and whose Z coordinate equals `z`.
inline Point3 backproject(const Point2& x, double z, const CameraIntrinsics& k) {
  if (!(z > 0.0))
    throw std::domain_error("backproject: depth must be positive");
  return {(x.u - k.px) * z / k.fx, (x.v - k.py) * z / k.fy, z};
}

}  // namespace mono3d
