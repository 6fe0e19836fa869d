#include "bevforge/camera.hpp"

#include <cmath>

namespace bevforge {

double Vec3::norm() const { return std::sqrt(x * x + y * y + z * z); }

Vec3 Vec3::normalized() const {
  const double n = norm();
  return {x / n, y / n, z / n};
}

Mat3 Mat3::rot_y(double a) {
  Mat3 r;
  const double c = std::cos(a), s = std::sin(a);
  r.m = {c, 0, s, 0, 1, 0, -s, 0, c};
  return r;
}

Mat3 Mat3::rot_x(double a) {
  Mat3 r;
  const double c = std::cos(a), s = std::sin(a);
  r.m = {1, 0, 0, 0, c, -s, 0, s, c};
  return r;
}

Vec3 Mat3::operator*(const Vec3& v) const {
  return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
          m[6] * v.x + m[7] * v.y + m[8] * v.z};
}

Mat3 Mat3::operator*(const Mat3& o) const {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0;
      for (int k = 0; k < 3; ++k) acc += at(i, k) * o.at(k, j);
      r.at(i, j) = acc;
    }
  return r;
}

Mat3 Mat3::transposed() const {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.at(i, j) = at(j, i);
  return r;
}

void CameraIntrinsics::validate() const {
  if (fx <= 0 || fy <= 0) throw DomainError("intrinsics: focal lengths must be positive");
  if (cx < 0 || cx >= width || cy < 0 || cy >= height)
    throw DomainError("intrinsics: principal point outside image");
}

CameraIntrinsics CameraIntrinsics::scaled(double factor) const {
  CameraIntrinsics k;
  k.fx = fx * factor;
  k.fy = fy * factor;
  k.cx = cx * factor;
  k.cy = cy * factor;
  k.width = static_cast<int>(std::lround(width * factor));
  k.height = static_cast<int>(std::lround(height * factor));
  return k;
}

Projection project(const CameraIntrinsics& K, const Vec3& p) {
  Projection out;
  if (p.z <= 0.0) return out;  // behind or on the camera plane
  out.pixel.u = K.fx * p.x / p.z + K.cx;
  out.pixel.v = K.fy * p.y / p.z + K.cy;
  out.depth = p.z;
  out.valid = p.z > kZNear && out.pixel.u >= 0.0 && out.pixel.u <= K.width - 1 &&
              out.pixel.v >= 0.0 && out.pixel.v <= K.height - 1;
  return out;
}

Vec3 unproject(const CameraIntrinsics& K, const Vec2& pixel, double depth) {
  if (depth <= 0.0) throw NonPositiveDepth("unproject: depth must be positive");
  return {(pixel.u - K.cx) / K.fx * depth, (pixel.v - K.cy) / K.fy * depth, depth};
}

void Pose::validate(double tol) const {
  const Mat3 rtr = rotation.transposed() * rotation;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const double expect = i == j ? 1.0 : 0.0;
      if (std::fabs(rtr.at(i, j) - expect) > tol)
        throw DomainError("pose: rotation is not orthonormal");
    }
  const auto& m = rotation.m;
  const double det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
                     m[2] * (m[3] * m[7] - m[4] * m[6]);
  if (std::fabs(det - 1.0) > tol) throw DomainError("pose: rotation determinant is not +1");
}

Pose compose(const Pose& a, const Pose& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

Pose invert(const Pose& a) {
  const Mat3 rt = a.rotation.transposed();
  return {rt, rt * (a.translation * -1.0)};
}

Pose identity_pose() { return {Mat3::identity(), {0, 0, 0}}; }

}  // namespace bevforge
