#pragma once

#include <array>

#include "bevforge/errors.hpp"

namespace bevforge {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const;
  Vec3 normalized() const;
};

struct Vec2 {
  double u = 0, v = 0;
};

// Row-major 3x3 matrix.
struct Mat3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Mat3 identity() { return {}; }
  static Mat3 rot_y(double angle_rad);  // yaw about the camera y (down) axis
  static Mat3 rot_x(double angle_rad);

  Vec3 operator*(const Vec3& v) const;
  Mat3 operator*(const Mat3& o) const;
  Mat3 transposed() const;
  double at(int r, int c) const { return m[r * 3 + c]; }
  double& at(int r, int c) { return m[r * 3 + c]; }
};

// Pinhole intrinsics; pixel (i, j) is centered at continuous coordinate
// (i, j). The same convention is used by the synthetic renderer and every
// sampling op.
struct CameraIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const;
  CameraIntrinsics scaled(double factor) const;  // downsampled image intrinsics
};

inline constexpr double kZNear = 0.1;  // meters; projections closer are invalid

struct Projection {
  Vec2 pixel;
  double depth = 0;  // camera-frame z
  bool valid = false;
};

Projection project(const CameraIntrinsics& K, const Vec3& point);
// Inverse of project for depth > 0 (z-depth, meters). Throws NonPositiveDepth.
Vec3 unproject(const CameraIntrinsics& K, const Vec2& pixel, double depth);

// Rigid transform mapping points FROM the source frame TO the target frame.
struct Pose {
  Mat3 rotation;
  Vec3 translation;

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  void validate(double tol = 1e-9) const;  // orthonormal, det +1
};

Pose compose(const Pose& a, const Pose& b);  // (a ∘ b)(p) = a(b(p))
Pose invert(const Pose& a);
Pose identity_pose();

}  // namespace bevforge
