#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

#include "lidarsim/error.hpp"
#include "lidarsim/kinematics.hpp"
#include "lidarsim/pose.hpp"
#include "lidarsim/random.hpp"

namespace lidarsim {

struct ImuModel {
  double rate = 200.0;  // Hz
  double gyro_noise_sigma = 0.0;
  double accel_noise_sigma = 0.0;
  Vec3 gyro_bias = Vec3::Zero();
  Vec3 accel_bias = Vec3::Zero();
  double gravity = 9.81;  // along world -z
  std::uint64_t seed = 0;

  double period() const { return 1.0 / rate; }

  void validate() const {
    if (!(rate > 0.0)) throw ValidationError("imu: rate must be > 0");
    if (!(gyro_noise_sigma >= 0.0) || !(accel_noise_sigma >= 0.0))
      throw ValidationError("imu: noise sigmas must be >= 0");
  }
};

struct ImuSample {
  double t = 0.0;
  Vec3 angular_velocity = Vec3::Zero();  // body frame, rad/s
  Vec3 specific_force = Vec3::Zero();    // body frame, m/s^2
};

namespace detail {

inline bool on_grid(double t, double step, std::int64_t& index) {
  const double r = t / step;
  index = std::llround(r);
  return index >= 0 && std::abs(r - static_cast<double>(index)) <= 1e-9 * std::max(1.0, std::abs(r));
}

}  // namespace detail

/// IMU reading at time t from the tick-state history. history[k] is the
/// state at k * tick_dt holding the command applied over the following tick;
/// the robot is taken to be at rest before history[0].
inline ImuSample simulate_imu(std::span<const RobotState> history, double tick_dt,
                              const ImuModel& model, double t) {
  std::int64_t imu_index = 0;
  std::int64_t tick = 0;
  if (!detail::on_grid(t, model.period(), imu_index))
    throw PreconditionError("simulate_imu: t = " + std::to_string(t) + " is not on the IMU clock grid");
  if (!detail::on_grid(t, tick_dt, tick) || tick >= static_cast<std::int64_t>(history.size()))
    throw PreconditionError("simulate_imu: no tick state at t = " + std::to_string(t));

  const RobotState& s = history[static_cast<std::size_t>(tick)];
  const double v_prev = tick > 0 ? history[static_cast<std::size_t>(tick - 1)].twist.v : 0.0;
  const double dvdt = (s.twist.v - v_prev) / tick_dt;
  const Vec3 heading(std::cos(s.theta), std::sin(s.theta), 0.0);
  const Vec3 left(-std::sin(s.theta), std::cos(s.theta), 0.0);
  const Vec3 a_world = dvdt * heading + s.twist.v * s.twist.w * left;
  const Vec3 g_world(0.0, 0.0, -model.gravity);
  const Mat3 r_body = Pose::planar(s.x, s.y, 0.0, s.theta).rotation();

  ImuSample out;
  out.t = t;
  out.angular_velocity = Vec3(0.0, 0.0, s.twist.w) + model.gyro_bias;
  out.specific_force = r_body.transpose() * (a_world - g_world) + model.accel_bias;
  if (model.gyro_noise_sigma > 0.0 || model.accel_noise_sigma > 0.0) {
    auto rng = make_stream(model.seed, RngStream::imu, static_cast<std::uint64_t>(imu_index));
    std::normal_distribution<double> n(0.0, 1.0);
    for (int a = 0; a < 3; ++a) out.angular_velocity[a] += model.gyro_noise_sigma * n(rng);
    for (int a = 0; a < 3; ++a) out.specific_force[a] += model.accel_noise_sigma * n(rng);
  }
  return out;
}

}  // namespace lidarsim
