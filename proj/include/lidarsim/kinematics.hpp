#pragma once

#include <algorithm>
#include <cmath>

#include "lidarsim/error.hpp"
#include "lidarsim/pose.hpp"

namespace lidarsim {

struct ChassisParams {
  double wheel_radius = 0.04;    // m
  double track_width = 0.30;     // m, between drive wheels
  double max_wheel_speed = 20.0; // rad/s

  void validate() const {
    if (!(wheel_radius > 0.0) || !(track_width > 0.0) || !(max_wheel_speed > 0.0))
      throw ValidationError("chassis parameters must be strictly positive");
  }
};

struct PlanarTwist {
  double v = 0.0;  // m/s
  double w = 0.0;  // rad/s

  bool operator==(const PlanarTwist&) const = default;
};

struct WheelSpeeds {
  double left = 0.0;   // rad/s
  double right = 0.0;  // rad/s
};

struct RobotState {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;  // (-pi, pi]
  PlanarTwist twist;
  double t = 0.0;
};

/// Differential-drive inverse kinematics. Saturated commands are scaled
/// uniformly so the commanded curvature is kept.
inline WheelSpeeds twist_to_wheels(const PlanarTwist& tw, const ChassisParams& p) {
  const double half = 0.5 * tw.w * p.track_width;
  WheelSpeeds ws{(tw.v - half) / p.wheel_radius, (tw.v + half) / p.wheel_radius};
  const double peak = std::max(std::abs(ws.left), std::abs(ws.right));
  if (peak > p.max_wheel_speed) {
    const double s = p.max_wheel_speed / peak;
    ws.left *= s;
    ws.right *= s;
  }
  return ws;
}

inline PlanarTwist wheels_to_twist(const WheelSpeeds& ws, const ChassisParams& p) {
  return {p.wheel_radius * (ws.left + ws.right) / 2.0,
          p.wheel_radius * (ws.right - ws.left) / p.track_width};
}

/// Twist the chassis actually executes. Returned unchanged (bit for bit) when
/// no wheel saturates, otherwise scaled down along the commanded curvature.
inline PlanarTwist saturate_twist(const PlanarTwist& tw, const ChassisParams& p) {
  const double half = 0.5 * std::abs(tw.w) * p.track_width;
  const double peak = (std::abs(tw.v) + half) / p.wheel_radius;
  // the slack keeps an already saturated command unchanged (replays)
  if (peak <= p.max_wheel_speed * (1.0 + 1e-12)) return tw;
  const double s = p.max_wheel_speed / peak;
  return {tw.v * s, tw.w * s};
}

/// Planar displacement of a constant-twist unicycle arc over dt, expressed
/// in the frame where the start heading is theta.
///
/// Uses sin(a+b) - sin(a) = 2 cos(a + b/2) sin(b/2), which equals the
/// textbook (v/w)(sin(theta + w dt) - sin(theta)) form but stays accurate as
/// w approaches zero.
inline Vec2 arc_displacement(double theta, const PlanarTwist& tw, double dt) {
  const double dist = tw.v * dt;
  if (std::abs(tw.w) < 1e-9) return {dist * std::cos(theta), dist * std::sin(theta)};
  const double half = 0.5 * tw.w * dt;
  const double sinc = std::sin(half) / half;
  const double mid = theta + half;
  return {dist * sinc * std::cos(mid), dist * sinc * std::sin(mid)};
}

/// Exact integration of a constant twist over dt (0 < dt <= 0.1 s).
inline RobotState step(const RobotState& s, const PlanarTwist& cmd, double dt) {
  if (!(dt > 0.0) || dt > 0.1) throw PreconditionError("step: dt must be in (0, 0.1]");
  RobotState out = s;
  const Vec2 d = arc_displacement(s.theta, cmd, dt);
  out.x += d.x();
  out.y += d.y();
  out.theta = wrap_angle(s.theta + cmd.w * dt);
  out.twist = cmd;
  out.t = s.t + dt;
  return out;
}

/// Same arc as step() but allowing dt = 0 and without the step-size limit;
/// used to evaluate poses between ticks.
inline RobotState propagate(const RobotState& s, const PlanarTwist& cmd, double dt) {
  if (dt == 0.0) return s;
  RobotState out = s;
  const Vec2 d = arc_displacement(s.theta, cmd, dt);
  out.x += d.x();
  out.y += d.y();
  out.theta = wrap_angle(s.theta + cmd.w * dt);
  out.twist = cmd;
  out.t = s.t + dt;
  return out;
}

/// Body pose in SE(3): planar state at height z0, yaw-only rotation.
inline Pose body_pose(const RobotState& s, double z0) {
  return Pose::planar(s.x, s.y, z0, s.theta);
}

/// Sensor pose: body pose composed with the fixed mount transform.
inline Pose lift_to_pose3(const RobotState& s, const Pose& sensor_mount, double z0) {
  return body_pose(s, z0) * sensor_mount;
}

}  // namespace lidarsim
