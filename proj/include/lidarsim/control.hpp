#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lidarsim/error.hpp"
#include "lidarsim/kinematics.hpp"
#include "lidarsim/spline.hpp"

namespace lidarsim {

// ---------------------------------------------------------------------------
// Keyboard teleoperation

enum class TeleopAction { forward, back, left, right, stop };

struct TeleopConfig {
  double linear_step = 0.05;   // m/s per press
  double angular_step = 0.1;   // rad/s per press
  double v_max = 0.5;
  double w_max = 1.5;
  std::map<std::string, TeleopAction> key_map = default_key_map();

  static std::map<std::string, TeleopAction> default_key_map() {
    using A = TeleopAction;
    return {{"w", A::forward}, {"ArrowUp", A::forward}, {"forward", A::forward},
            {"s", A::back},    {"ArrowDown", A::back},  {"back", A::back},
            {"a", A::left},    {"ArrowLeft", A::left},  {"left", A::left},
            {"d", A::right},   {"ArrowRight", A::right}, {"right", A::right},
            {" ", A::stop},    {"space", A::stop},      {"stop", A::stop}};
  }
};

struct TeleopResult {
  PlanarTwist twist;
  bool ignored = false;  // key not in the map
};

inline TeleopResult teleop_update(const PlanarTwist& current, const std::string& key,
                                  const TeleopConfig& cfg) {
  const auto it = cfg.key_map.find(key);
  if (it == cfg.key_map.end()) return {current, true};
  PlanarTwist out = current;
  switch (it->second) {
    case TeleopAction::forward: out.v += cfg.linear_step; break;
    case TeleopAction::back: out.v -= cfg.linear_step; break;
    case TeleopAction::left: out.w += cfg.angular_step; break;
    case TeleopAction::right: out.w -= cfg.angular_step; break;
    case TeleopAction::stop: out = {}; break;
  }
  out.v = std::clamp(out.v, -cfg.v_max, cfg.v_max);
  out.w = std::clamp(out.w, -cfg.w_max, cfg.w_max);
  return {out, false};
}

// ---------------------------------------------------------------------------
// Carrot-following pure pursuit over a dense spline

struct TrackerState {
  std::size_t target_index = 0;
  double cruise_speed = 0.2;      // m/s
  double switch_threshold = 0.01; // m
  double heading_gain = 2.0;      // 1/s
  double w_max = 1.5;             // rad/s
  bool finished = false;
};

/// One control tick. The target advances while the robot is within
/// switch_threshold of it, and also while it sits strictly inside the
/// robot's minimum turning circle (radius cruise_speed / w_max) on the side
/// the robot would turn toward, since such a target cannot be reached without
/// first driving away from it.
inline std::pair<PlanarTwist, TrackerState> pure_pursuit_step(const RobotState& robot,
                                                              const SplinePath& path,
                                                              TrackerState st) {
  if (st.finished) throw PreconditionError("pure_pursuit_step: tracker already finished");
  if (!(st.switch_threshold > 0.0)) throw PreconditionError("pure_pursuit_step: threshold must be > 0");
  const std::size_t last = path.last_index();
  const double turn_radius = st.cruise_speed / st.w_max;
  const Vec2 pos(robot.x, robot.y);

  auto bearing = [&](std::size_t idx) {
    const Vec2 delta = path.samples[idx] - pos;
    return wrap_angle(std::atan2(delta.y(), delta.x()) - robot.theta);
  };

  double dist = (path.samples[st.target_index] - pos).norm();
  while (st.target_index < last) {
    if (dist < st.switch_threshold) {
      ++st.target_index;
    } else if (dist < 2.0 * turn_radius * std::abs(std::sin(bearing(st.target_index)))) {
      ++st.target_index;
    } else {
      break;
    }
    dist = (path.samples[st.target_index] - pos).norm();
  }
  if (st.target_index == last && dist < st.switch_threshold) {
    st.finished = true;
    return {PlanarTwist{}, st};
  }
  const double alpha = bearing(st.target_index);
  const double w = std::clamp(st.heading_gain * alpha, -st.w_max, st.w_max);
  return {PlanarTwist{st.cruise_speed, w}, st};
}

/// Distance from a point to the sampled path polyline, searched within
/// `window` samples of `around`.
inline double cross_track_error(const SplinePath& path, const Vec2& p, std::size_t around,
                                std::size_t window = 250) {
  const std::size_t last = path.last_index();
  const std::size_t lo = around > window ? around - window : 0;
  const std::size_t hi = std::min(last, around + window);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = lo; i < hi; ++i) {
    const Vec2 a = path.samples[i];
    const Vec2 ab = path.samples[i + 1] - a;
    const double len2 = ab.squaredNorm();
    const double s = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    best = std::min(best, (a + s * ab - p).norm());
  }
  if (lo == hi) best = (path.samples[lo] - p).norm();
  return best;
}

struct TrackingSample {
  double t = 0.0;
  std::size_t target_index = 0;
  double cross_track = 0.0;
};

/// Stateful wrapper the engine calls once per control tick.
class PathTracker {
 public:
  PathTracker(SplinePath path, TrackerState initial)
      : path_(std::move(path)), initial_(initial), state_(initial) {}

  const SplinePath& path() const { return path_; }
  const TrackerState& state() const { return state_; }
  const std::vector<TrackingSample>& log() const { return log_; }
  bool finished() const { return state_.finished; }

  /// Warning text when the robot starts more than 0.5 m from the path start.
  std::optional<std::string> start_warning(const RobotState& robot) const {
    const double d = (path_.samples.front() - Vec2(robot.x, robot.y)).norm();
    if (d > 0.5)
      return "robot starts " + std::to_string(d) + " m from the path start (> 0.5 m)";
    return std::nullopt;
  }

  PlanarTwist command(const RobotState& robot) {
    if (state_.finished) return {};
    auto [cmd, next] = pure_pursuit_step(robot, path_, state_);
    state_ = next;
    log_.push_back({robot.t, state_.target_index,
                    cross_track_error(path_, Vec2(robot.x, robot.y), state_.target_index)});
    return cmd;
  }

  void reset() {
    state_ = initial_;
    log_.clear();
  }

 private:
  SplinePath path_;
  TrackerState initial_;
  TrackerState state_;
  std::vector<TrackingSample> log_;
};

}  // namespace lidarsim
