#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cmath>

namespace metafine {

using Vec3 = Eigen::Vector3d;
using Quat = Eigen::Quaterniond;

constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

/// Rigid transform: position in meters plus unit-quaternion orientation.
struct Pose {
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();

  Pose() = default;
  Pose(const Vec3& p, const Quat& q) : position(p), orientation(q) {}

  Pose operator*(const Pose& rhs) const {
    return {position + orientation * rhs.position, orientation * rhs.orientation};
  }
  Vec3 apply(const Vec3& p) const { return position + orientation * p; }
  Pose inverse() const {
    const Quat inv = orientation.conjugate();
    return {-(inv * position), inv};
  }
};

inline Quat yaw_quat(double yaw_deg) {
  return Quat(Eigen::AngleAxisd(deg2rad(yaw_deg), Vec3::UnitZ()));
}

/// Rotation from a rotation vector expressed in degrees (axis * angle).
inline Quat rotvec_deg(const Vec3& rv_deg) {
  const double angle = rv_deg.norm();
  if (angle < 1e-15) return Quat::Identity();
  return Quat(Eigen::AngleAxisd(deg2rad(angle), rv_deg / angle));
}

/// Rotation angle in degrees of q, in [0, 180].
inline double rotation_angle_deg(const Quat& q) {
  const double w = std::min(1.0, std::abs(q.normalized().w()));
  return rad2deg(2.0 * std::acos(w));
}

/// Angle between two vectors in degrees; 0 when either is degenerate.
inline double angle_between_deg(const Vec3& a, const Vec3& b) {
  const double na = a.norm(), nb = b.norm();
  if (na < 1e-15 || nb < 1e-15) return 0.0;
  const double c = std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
  return rad2deg(std::acos(c));
}

/// Rotation vector in degrees; the angle lies in [0, 180].
inline Vec3 rotvec_of(const Quat& q) {
  const Eigen::AngleAxisd aa(q.normalized());
  return aa.axis() * rad2deg(aa.angle());
}

/// [w, x, y, z] order, which is what every file format in this project uses.
inline std::array<double, 4> quat_wxyz(const Quat& q) { return {q.w(), q.x(), q.y(), q.z()}; }
inline Quat quat_from_wxyz(const std::array<double, 4>& a) { return Quat(a[0], a[1], a[2], a[3]); }

}  // namespace metafine
