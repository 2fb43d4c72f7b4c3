#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lidarsim/config.hpp"
#include "lidarsim/control.hpp"
#include "lidarsim/error.hpp"
#include "lidarsim/imu.hpp"
#include "lidarsim/kinematics.hpp"
#include "lidarsim/lidar.hpp"
#include "lidarsim/scene.hpp"
#include "lidarsim/spline.hpp"

namespace lidarsim {

struct GroundTruthSample {
  double t = 0.0;
  Pose pose;  // body frame in world
  PlanarTwist twist;
};

enum class EnginePhase { control, kinematics, ground_truth, imu, lidar };

inline const char* to_string(EnginePhase p) {
  switch (p) {
    case EnginePhase::control: return "control";
    case EnginePhase::kinematics: return "kinematics";
    case EnginePhase::ground_truth: return "ground_truth";
    case EnginePhase::imu: return "imu";
    case EnginePhase::lidar: return "lidar";
  }
  return "?";
}

struct EngineEvent {
  std::int64_t tick = 0;
  EnginePhase phase = EnginePhase::control;
};

/// Everything a run produces. Frames are kept here only when no frame sink
/// is installed.
struct SimulationStreams {
  std::vector<GroundTruthSample> ground_truth;
  std::vector<ImuSample> imu;
  std::vector<PointCloudFrame> frames;
  std::vector<TimedCommand> commands;  // applied command changes
  std::vector<TrackingSample> tracking;
};

struct RunSummary {
  std::int64_t ticks = 0;
  std::int64_t frames = 0;
  std::size_t ground_truth_samples = 0;
  std::size_t imu_samples = 0;
  double sim_time = 0.0;
  double distance = 0.0;  // m, along ground truth
  bool tracker_finished = false;
  bool timed_out = false;
};

struct SimulationOptions {
  unsigned workers = 1;
  bool record_events = false;
  /// Receives each finished frame (full resolution) with its index.
  std::function<void(std::int64_t, const PointCloudFrame&)> frame_sink;
};

/// Fixed-step loop. Each tick k at t_k = k * base_dt runs, in order:
/// control (command for tick k), kinematics (state k holds that command and
/// state k+1 is integrated), ground truth (state k), IMU (if t_k is on the
/// IMU grid) and LIDAR. Frame f covers ticks [f*n, (f+1)*n); it is
/// synthesized on its last tick, when every command inside it is known.
class Simulation {
 public:
  Simulation(RunConfig cfg, ScenePtr scene, SimulationOptions opt = {})
      : cfg_(std::move(cfg)), scene_(std::move(scene)), opt_(std::move(opt)) {
    cfg_.validate();
    if (!scene_) throw PreconditionError("Simulation: null scene");
    cfg_.imu.seed = cfg_.seed;
    ticks_per_frame_ = cfg_.ticks_per_frame();
    ticks_per_imu_ = cfg_.ticks_per_imu();
    total_ticks_ = cfg_.total_ticks();
    current_.x = cfg_.initial.x;
    current_.y = cfg_.initial.y;
    current_.theta = wrap_angle(cfg_.initial.yaw);
    if (cfg_.control.mode == ControlMode::track) set_path(cfg_.control.path);
  }

  const RunConfig& config() const { return cfg_; }
  const ScenePtr& scene() const { return scene_; }
  const SimulationStreams& streams() const { return streams_; }
  const std::vector<EngineEvent>& events() const { return events_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  const std::vector<RobotState>& states() const { return states_; }
  /// State at the start of the next tick.
  const RobotState& current_state() const { return current_; }
  const PlanarTwist& last_command() const { return last_cmd_; }
  const PathTracker* tracker() const { return tracker_ ? &*tracker_ : nullptr; }
  std::int64_t tick_count() const { return tick_; }
  std::int64_t frame_count() const { return frames_done_; }
  double sim_time() const { return static_cast<double>(tick_) * cfg_.base_dt; }

  // -- control inputs, applied at the next tick boundary --------------------

  /// Returns false when the key is not mapped.
  bool apply_key(const std::string& key) {
    const auto r = teleop_update(teleop_twist_, key, cfg_.control.teleop);
    teleop_twist_ = r.twist;
    if (!r.ignored) leave_tracking();
    return !r.ignored;
  }

  void set_teleop_twist(const PlanarTwist& tw) {
    teleop_twist_ = {std::clamp(tw.v, -cfg_.control.teleop.v_max, cfg_.control.teleop.v_max),
                     std::clamp(tw.w, -cfg_.control.teleop.w_max, cfg_.control.teleop.w_max)};
    leave_tracking();
  }

  const PlanarTwist& teleop_twist() const { return teleop_twist_; }

  /// Builds the spline and switches to tracking from the current state.
  const SplinePath& set_path(const std::vector<Vec2>& points) {
    tracker_.emplace(build_spline(points), cfg_.control.tracker_state());
    for (const auto& w : tracker_->path().warnings) warnings_.push_back(w);
    if (auto w = tracker_->start_warning(current_)) warnings_.push_back(*w);
    cfg_.control.mode = ControlMode::track;
    return tracker_->path();
  }

  bool done() const {
    if (tick_ >= total_ticks_) return true;
    if (cfg_.control.mode == ControlMode::track && tracker_ && tracker_->finished() && !track_continuous_)
      return tick_ % ticks_per_frame_ == 0;
    return false;
  }

  /// Interactive sessions keep running after the tracker finishes.
  void set_track_continuous(bool on) { track_continuous_ = on; }
  /// Lifts the duration limit (interactive sessions).
  void set_unbounded() { total_ticks_ = std::numeric_limits<std::int64_t>::max(); }

  void tick() {
    const std::int64_t k = tick_;
    const double t = static_cast<double>(k) * cfg_.base_dt;

    // control
    PlanarTwist cmd = command_for(k, t);
    log_event(k, EnginePhase::control);

    // kinematics
    cmd = saturate_twist(cmd, cfg_.chassis);
    RobotState s = current_;
    s.t = t;
    s.twist = cmd;
    states_.push_back(s);
    RobotState next = step(s, cmd, cfg_.base_dt);
    next.t = static_cast<double>(k + 1) * cfg_.base_dt;
    current_ = next;
    if (streams_.commands.empty() || !(streams_.commands.back().twist == cmd)) streams_.commands.push_back({t, cmd});
    last_cmd_ = cmd;
    log_event(k, EnginePhase::kinematics);

    // ground truth
    streams_.ground_truth.push_back({t, body_pose(s, cfg_.base_height), cmd});
    if (streams_.ground_truth.size() > 1) {
      const auto& a = streams_.ground_truth[streams_.ground_truth.size() - 2].pose.position;
      distance_ += (streams_.ground_truth.back().pose.position - a).norm();
    }
    log_event(k, EnginePhase::ground_truth);

    // IMU
    if (k % ticks_per_imu_ == 0) {
      streams_.imu.push_back(simulate_imu(states_, cfg_.base_dt, cfg_.imu, t));
      log_event(k, EnginePhase::imu);
    }

    // LIDAR
    ++tick_;
    if (tick_ % ticks_per_frame_ == 0) {
      synthesize_frame(tick_ / ticks_per_frame_ - 1);
      log_event(k, EnginePhase::lidar);
    }
  }

  RunSummary run() {
    while (!done()) tick();
    return summary();
  }

  RunSummary summary() const {
    RunSummary s;
    s.ticks = tick_;
    s.frames = frames_done_;
    s.ground_truth_samples = streams_.ground_truth.size();
    s.imu_samples = streams_.imu.size();
    s.sim_time = sim_time();
    s.distance = distance_;
    s.tracker_finished = tracker_ && tracker_->finished();
    s.timed_out = cfg_.control.mode == ControlMode::track && !s.tracker_finished && tick_ >= total_ticks_;
    return s;
  }

  /// Exact body state at any time covered by recorded ticks: the arc from
  /// the last tick state under its command.
  RobotState body_state_at(double t) const {
    const double latest = static_cast<double>(tick_) * cfg_.base_dt;
    if (t < -1e-12 || t > latest + 1e-9)
      throw PreconditionError("body_state_at: t = " + std::to_string(t) + " outside recorded range");
    if (states_.empty()) return current_;
    const double r = t / cfg_.base_dt;
    auto j = static_cast<std::int64_t>(std::llround(r));
    if (std::abs(r - static_cast<double>(j)) > 1e-9) j = static_cast<std::int64_t>(std::floor(r));
    if (j >= tick_) return current_;
    j = std::max<std::int64_t>(0, j);
    const RobotState& s = states_[static_cast<std::size_t>(j)];
    return propagate(s, s.twist, t - s.t);
  }

  /// Sensor pose at t within the current frame window.
  Pose pose_at(double t) const {
    const std::int64_t start_tick = frames_done_ * ticks_per_frame_;
    const double start = static_cast<double>(start_tick) * cfg_.base_dt;
    const double end = static_cast<double>(std::min(start_tick + ticks_per_frame_, tick_)) * cfg_.base_dt;
    if (t < start - 1e-12 || t > end + 1e-12)
      throw PreconditionError("pose_at: t = " + std::to_string(t) + " outside the current frame window [" +
                              std::to_string(start) + ", " + std::to_string(end) + "]");
    return sensor_pose(t);
  }

  Pose sensor_pose(double t) const { return lift_to_pose3(body_state_at(t), cfg_.lidar.mount, cfg_.base_height); }

 private:
  PlanarTwist command_for(std::int64_t /*k*/, double t) {
    switch (cfg_.control.mode) {
      case ControlMode::teleop: return teleop_twist_;
      case ControlMode::scripted: {
        const auto& cmds = cfg_.control.commands;
        while (script_next_ < cmds.size() && cmds[script_next_].t <= t + 1e-9) ++script_next_;
        return script_next_ == 0 ? PlanarTwist{} : cmds[script_next_ - 1].twist;
      }
      case ControlMode::track: {
        RobotState r = current_;
        r.t = t;
        const PlanarTwist cmd = tracker_->command(r);
        if (!tracker_->log().empty() && tracker_->log().back().t == t) streams_.tracking.push_back(tracker_->log().back());
        return cmd;
      }
    }
    return {};
  }

  void leave_tracking() {
    if (cfg_.control.mode == ControlMode::track) cfg_.control.mode = ControlMode::teleop;
  }

  void synthesize_frame(std::int64_t f) {
    const double t0 = static_cast<double>(f * ticks_per_frame_) * cfg_.base_dt;
    LidarFrameOptions lo;
    lo.seed = cfg_.seed;
    lo.frame_index = f;
    lo.workers = opt_.workers;
    lo.per_frame_snapshot = cfg_.per_frame_snapshot;
    if (cfg_.lidar.pattern == PatternKind::mechanical && mech_beams_.empty())
      mech_beams_ = mechanical_pattern(cfg_.lidar);
    const SensorPoseFn pose = [this](double t) { return sensor_pose(t); };
    auto frame = cfg_.lidar.pattern == PatternKind::mechanical
                     ? simulate_lidar_frame(scene_, pose, cfg_.lidar, t0, mech_beams_, lo)
                     : simulate_lidar_frame(scene_, pose, cfg_.lidar, t0, risley_pattern(cfg_.lidar, f), lo);
    ++frames_done_;
    if (opt_.frame_sink) {
      opt_.frame_sink(f, frame);
    } else {
      streams_.frames.push_back(std::move(frame));
    }
  }

  void log_event(std::int64_t k, EnginePhase p) {
    if (opt_.record_events) events_.push_back({k, p});
  }

  RunConfig cfg_;
  ScenePtr scene_;
  SimulationOptions opt_;
  std::int64_t ticks_per_frame_ = 20;
  std::int64_t ticks_per_imu_ = 1;
  std::int64_t total_ticks_ = 0;
  std::int64_t tick_ = 0;
  std::int64_t frames_done_ = 0;
  RobotState current_;
  std::vector<RobotState> states_;
  PlanarTwist teleop_twist_;
  PlanarTwist last_cmd_;
  std::optional<PathTracker> tracker_;
  bool track_continuous_ = false;
  std::size_t script_next_ = 0;
  double distance_ = 0.0;
  std::vector<BeamSample> mech_beams_;  // frame-invariant, built once
  SimulationStreams streams_;
  std::vector<EngineEvent> events_;
  std::vector<std::string> warnings_;
};

}  // namespace lidarsim
