#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace lidarsim {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

inline constexpr double kPi = std::numbers::pi;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  double r = std::remainder(a, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

/// Rigid transform: p_parent = orientation * p_child + position.
struct Pose {
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();

  static Pose identity() { return {}; }

  static Pose from_xyz_rpy(const Vec3& xyz, double roll, double pitch, double yaw) {
    Pose p;
    p.position = xyz;
    p.orientation = Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ()) *
                         Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
                         Eigen::AngleAxisd(roll, Vec3::UnitX()));
    p.orientation.normalize();
    return p;
  }

  static Pose from_xyz_rpy_deg(const Vec3& xyz, const Vec3& rpy_deg) {
    return from_xyz_rpy(xyz, deg2rad(rpy_deg.x()), deg2rad(rpy_deg.y()),
                        deg2rad(rpy_deg.z()));
  }

  static Pose planar(double x, double y, double z, double yaw) {
    return from_xyz_rpy(Vec3(x, y, z), 0.0, 0.0, yaw);
  }

  Mat3 rotation() const { return orientation.toRotationMatrix(); }

  Vec3 transform_point(const Vec3& p) const { return orientation * p + position; }
  Vec3 rotate(const Vec3& v) const { return orientation * v; }

  Pose inverse() const {
    Pose inv;
    inv.orientation = orientation.conjugate();
    inv.position = -(inv.orientation * position);
    return inv;
  }

  Pose operator*(const Pose& rhs) const {
    Pose out;
    out.position = orientation * rhs.position + position;
    out.orientation = (orientation * rhs.orientation).normalized();
    return out;
  }

  Eigen::Isometry3d isometry() const {
    Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
    t.linear() = rotation();
    t.translation() = position;
    return t;
  }

  /// Heading about world z (meaningful for yaw-only poses).
  double yaw() const {
    const Mat3 r = rotation();
    return std::atan2(r(1, 0), r(0, 0));
  }
};

struct StampedPose {
  double t = 0.0;
  Pose pose;
};

/// Linear position / spherical-linear orientation blend, alpha in [0, 1].
inline Pose interpolate(const Pose& a, const Pose& b, double alpha) {
  if (alpha <= 0.0) return a;
  if (alpha >= 1.0) return b;
  Pose out;
  out.position = a.position + alpha * (b.position - a.position);
  out.orientation = a.orientation.slerp(alpha, b.orientation).normalized();
  return out;
}

/// Rotation angle of a relative rotation, radians in [0, pi].
inline double rotation_angle(const Quat& q) {
  const Quat n = q.normalized();
  return 2.0 * std::atan2(n.vec().norm(), std::abs(n.w()));
}

}  // namespace lidarsim
