#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lidarsim/control.hpp"
#include "lidarsim/error.hpp"
#include "lidarsim/imu.hpp"
#include "lidarsim/kinematics.hpp"
#include "lidarsim/lidar.hpp"
#include "lidarsim/scene.hpp"

namespace lidarsim {

enum class ControlMode { teleop, track, scripted };

inline const char* to_string(ControlMode m) {
  switch (m) {
    case ControlMode::teleop: return "teleop";
    case ControlMode::track: return "track";
    case ControlMode::scripted: return "scripted";
  }
  return "?";
}

inline ControlMode parse_control_mode(const std::string& s) {
  if (s == "teleop") return ControlMode::teleop;
  if (s == "track") return ControlMode::track;
  if (s == "scripted") return ControlMode::scripted;
  throw ParseError("unknown control mode '" + s + "' (expected teleop, track or scripted)");
}

/// Command held from time t until the next entry.
struct TimedCommand {
  double t = 0.0;
  PlanarTwist twist;
};

struct ControlConfig {
  ControlMode mode = ControlMode::teleop;
  std::vector<Vec2> path;
  std::vector<TimedCommand> commands;
  double cruise_speed = 0.2;
  double heading_gain = 2.0;
  double w_max = 1.5;
  double switch_threshold = 0.01;
  TeleopConfig teleop;

  TrackerState tracker_state() const {
    TrackerState st;
    st.cruise_speed = cruise_speed;
    st.heading_gain = heading_gain;
    st.w_max = w_max;
    st.switch_threshold = switch_threshold;
    return st;
  }
};

struct InitialPose {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;  // rad
};

struct RunConfig {
  std::filesystem::path scene_path;
  LidarModel lidar = *builtin_lidar("avia");
  ImuModel imu;
  ChassisParams chassis;
  double base_height = 0.04;  // body frame origin above ground, m
  InitialPose initial;
  ControlConfig control;
  /// Run length; in track mode the tracker must finish within it.
  double duration = 10.0;
  double base_dt = 0.005;
  std::uint64_t seed = 0;
  bool per_frame_snapshot = false;

  std::int64_t total_ticks() const { return std::llround(duration / base_dt); }
  std::int64_t ticks_per_frame() const { return std::llround(lidar.frame_period() / base_dt); }
  std::int64_t ticks_per_imu() const { return std::llround(imu.period() / base_dt); }

  void validate() const {
    if (!(base_dt > 0.0) || base_dt > 0.1) throw ValidationError("base_dt must be in (0, 0.1]");
    if (!(duration > 0.0)) throw ValidationError("duration must be > 0");
    lidar.validate();
    imu.validate();
    chassis.validate();
    auto divides = [&](double period, const char* what) {
      const double r = period / base_dt;
      const double n = std::round(r);
      if (n < 1.0 || std::abs(r - n) > 1e-9 * r)
        throw ValidationError(std::string("base_dt ") + std::to_string(base_dt) + " s does not divide the " +
                              what + " period " + std::to_string(period) + " s");
    };
    divides(lidar.frame_period(), "LIDAR frame");
    divides(imu.period(), "IMU");
    {
      const double r = duration / base_dt;
      if (std::abs(r - std::round(r)) > 1e-9 * r)
        throw ValidationError("duration must be a whole number of base_dt steps");
    }
    if (control.mode == ControlMode::track) {
      if (control.path.size() < 2) throw ValidationError("track mode needs a path with at least 2 points");
      if (!(control.cruise_speed > 0.0) || !(control.heading_gain > 0.0) || !(control.w_max > 0.0) ||
          !(control.switch_threshold > 0.0))
        throw ValidationError("tracker gains, limits and threshold must be > 0");
    }
    for (std::size_t i = 1; i < control.commands.size(); ++i)
      if (!(control.commands[i].t >= control.commands[i - 1].t))
        throw ValidationError("command times must be non-decreasing (entry " + std::to_string(i) + ")");
  }
};

namespace detail {

inline std::string read_text_file(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(std::string("cannot open ") + what + " " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::json parse_json_text(const std::string& text, const std::string& source) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const auto [line, col] = line_col(text, e.byte == 0 ? 0 : e.byte - 1);
    throw ParseError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + e.what());
  }
}

inline void check_keys(const nlohmann::json& obj, const std::set<std::string>& allowed, const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key())) throw ParseError(where + ": unknown field '" + it.key() + "'");
}

inline double opt_number(const nlohmann::json& obj, const char* key, double fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number()) throw ParseError(where + "." + key + ": expected a number");
  return obj[key].get<double>();
}

inline std::vector<Vec2> parse_points(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array()) throw ParseError(where + ": expected an array of [x, y] pairs");
  std::vector<Vec2> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& p = j[i];
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
      throw ParseError(where + "[" + std::to_string(i) + "]: expected [x, y]");
    out.emplace_back(p[0].get<double>(), p[1].get<double>());
  }
  return out;
}

inline LidarModel parse_lidar(const nlohmann::json& j, const std::string& where) {
  if (j.is_string()) {
    auto m = builtin_lidar(j.get<std::string>());
    if (!m) throw ParseError(where + ": unknown LIDAR model '" + j.get<std::string>() + "'");
    return *m;
  }
  if (!j.is_object()) throw ParseError(where + ": expected a model name or an object");
  check_keys(j,
             {"base", "name", "pattern", "fov_h", "fov_v", "channels", "elevation_min", "elevation_max",
              "point_rate", "max_range", "frame_rate", "range_noise_sigma", "prism_f1", "prism_f2",
              "prism_phase", "mount"},
             where);
  LidarModel m;
  if (j.contains("base")) m = parse_lidar(j["base"], where + ".base");
  if (j.contains("name")) m.name = j["name"].get<std::string>();
  if (j.contains("pattern")) {
    const auto p = j["pattern"].get<std::string>();
    if (p == "mechanical") m.pattern = PatternKind::mechanical;
    else if (p == "risley") m.pattern = PatternKind::risley;
    else throw ParseError(where + ".pattern: expected 'mechanical' or 'risley'");
  }
  m.fov_h_deg = opt_number(j, "fov_h", m.fov_h_deg, where);
  m.fov_v_deg = opt_number(j, "fov_v", m.fov_v_deg, where);
  m.channels = static_cast<int>(opt_number(j, "channels", m.channels, where));
  m.elevation_min_deg = opt_number(j, "elevation_min", m.elevation_min_deg, where);
  m.elevation_max_deg = opt_number(j, "elevation_max", m.elevation_max_deg, where);
  m.point_rate = opt_number(j, "point_rate", m.point_rate, where);
  m.max_range = opt_number(j, "max_range", m.max_range, where);
  m.frame_rate = opt_number(j, "frame_rate", m.frame_rate, where);
  m.range_noise_sigma = opt_number(j, "range_noise_sigma", m.range_noise_sigma, where);
  m.prism_f1_hz = opt_number(j, "prism_f1", m.prism_f1_hz, where);
  m.prism_f2_hz = opt_number(j, "prism_f2", m.prism_f2_hz, where);
  m.prism_phase_rad = opt_number(j, "prism_phase", m.prism_phase_rad, where);
  if (j.contains("mount")) m.mount = json_pose(j["mount"], where + ".mount");
  return m;
}

}  // namespace detail

/// `.path.json`: an array of [x, y] pairs, or an object with a "points" array.
inline std::vector<Vec2> load_path_file(const std::filesystem::path& path) {
  const auto j = detail::parse_json_text(detail::read_text_file(path, "path file"), path.string());
  return detail::parse_points(j.is_object() && j.contains("points") ? j["points"] : j, path.string());
}

/// Command log: one `t v w` line per change; blank lines and '#' comments skipped.
inline std::vector<TimedCommand> parse_command_log(std::istream& in, const std::string& source) {
  std::vector<TimedCommand> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    TimedCommand c;
    std::string extra;
    if (!(ls >> c.t >> c.twist.v >> c.twist.w) || (ls >> extra))
      throw ParseError(source + ": row " + std::to_string(row) + ": expected 't v w'");
    if (!out.empty() && c.t < out.back().t)
      throw ParseError(source + ": row " + std::to_string(row) + ": time goes backwards");
    out.push_back(c);
  }
  return out;
}

inline std::vector<TimedCommand> load_command_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open command log " + path.string());
  return parse_command_log(in, path.string());
}

inline void write_command_log(std::ostream& out, const std::vector<TimedCommand>& cmds) {
  char buf[128];
  for (const auto& c : cmds) {
    std::snprintf(buf, sizeof buf, "%.9f %.17g %.17g\n", c.t, c.twist.v, c.twist.w);
    out << buf;
  }
}

/// Relative file references (scene, path, commands) resolve against base_dir.
inline RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir,
                                  const std::string& source = "config") {
  using detail::opt_number;
  if (!j.is_object()) throw ParseError(source + ": top level must be an object");
  detail::check_keys(j,
                     {"scene", "lidar", "imu", "chassis", "base_height", "initial_pose", "control", "duration",
                      "base_dt", "seed", "per_frame_snapshot"},
                     source);
  RunConfig cfg;
  if (!j.contains("scene") || !j["scene"].is_string()) throw ParseError(source + ": missing string field 'scene'");
  cfg.scene_path = base_dir / j["scene"].get<std::string>();
  if (j.contains("lidar")) cfg.lidar = detail::parse_lidar(j["lidar"], source + ".lidar");

  if (j.contains("imu")) {
    const auto& ji = j["imu"];
    const std::string w = source + ".imu";
    if (!ji.is_object()) throw ParseError(w + ": expected an object");
    detail::check_keys(ji, {"rate", "gyro_noise_sigma", "accel_noise_sigma", "gyro_bias", "accel_bias", "gravity"}, w);
    cfg.imu.rate = opt_number(ji, "rate", cfg.imu.rate, w);
    cfg.imu.gyro_noise_sigma = opt_number(ji, "gyro_noise_sigma", 0.0, w);
    cfg.imu.accel_noise_sigma = opt_number(ji, "accel_noise_sigma", 0.0, w);
    cfg.imu.gravity = opt_number(ji, "gravity", cfg.imu.gravity, w);
    if (ji.contains("gyro_bias")) cfg.imu.gyro_bias = detail::json_vec3(ji["gyro_bias"], w + ".gyro_bias");
    if (ji.contains("accel_bias")) cfg.imu.accel_bias = detail::json_vec3(ji["accel_bias"], w + ".accel_bias");
  }
  if (j.contains("chassis")) {
    const auto& jc = j["chassis"];
    const std::string w = source + ".chassis";
    detail::check_keys(jc, {"wheel_radius", "track_width", "max_wheel_speed"}, w);
    cfg.chassis.wheel_radius = opt_number(jc, "wheel_radius", cfg.chassis.wheel_radius, w);
    cfg.chassis.track_width = opt_number(jc, "track_width", cfg.chassis.track_width, w);
    cfg.chassis.max_wheel_speed = opt_number(jc, "max_wheel_speed", cfg.chassis.max_wheel_speed, w);
  }
  cfg.base_height = opt_number(j, "base_height", cfg.base_height, source);
  if (j.contains("initial_pose")) {
    const auto& jp = j["initial_pose"];
    const std::string w = source + ".initial_pose";
    detail::check_keys(jp, {"x", "y", "yaw_deg", "yaw_rad"}, w);
    if (jp.contains("yaw_deg") && jp.contains("yaw_rad")) throw ParseError(w + ": give either yaw_deg or yaw_rad");
    cfg.initial.x = opt_number(jp, "x", 0.0, w);
    cfg.initial.y = opt_number(jp, "y", 0.0, w);
    cfg.initial.yaw = jp.contains("yaw_rad") ? opt_number(jp, "yaw_rad", 0.0, w)
                                             : deg2rad(opt_number(jp, "yaw_deg", 0.0, w));
  }
  if (j.contains("control")) {
    const auto& jc = j["control"];
    const std::string w = source + ".control";
    if (!jc.is_object()) throw ParseError(w + ": expected an object");
    detail::check_keys(jc,
                       {"mode", "path", "commands", "cruise_speed", "heading_gain", "w_max", "switch_threshold",
                        "teleop"},
                       w);
    auto& c = cfg.control;
    if (jc.contains("mode")) c.mode = parse_control_mode(jc["mode"].get<std::string>());
    if (jc.contains("path")) {
      c.path = jc["path"].is_string() ? load_path_file(base_dir / jc["path"].get<std::string>())
                                      : detail::parse_points(jc["path"], w + ".path");
    }
    if (jc.contains("commands")) {
      if (jc["commands"].is_string()) {
        c.commands = load_command_log(base_dir / jc["commands"].get<std::string>());
      } else {
        for (const auto& e : jc["commands"]) {
          if (!e.is_array() || e.size() != 3) throw ParseError(w + ".commands: expected [t, v, w] entries");
          c.commands.push_back({e[0].get<double>(), {e[1].get<double>(), e[2].get<double>()}});
        }
      }
    }
    c.cruise_speed = opt_number(jc, "cruise_speed", c.cruise_speed, w);
    c.heading_gain = opt_number(jc, "heading_gain", c.heading_gain, w);
    c.w_max = opt_number(jc, "w_max", c.w_max, w);
    c.switch_threshold = opt_number(jc, "switch_threshold", c.switch_threshold, w);
    if (jc.contains("teleop")) {
      const auto& jt = jc["teleop"];
      const std::string wt = w + ".teleop";
      detail::check_keys(jt, {"linear_step", "angular_step", "v_max", "w_max"}, wt);
      c.teleop.linear_step = opt_number(jt, "linear_step", c.teleop.linear_step, wt);
      c.teleop.angular_step = opt_number(jt, "angular_step", c.teleop.angular_step, wt);
      c.teleop.v_max = opt_number(jt, "v_max", c.teleop.v_max, wt);
      c.teleop.w_max = opt_number(jt, "w_max", c.teleop.w_max, wt);
      if (!(c.teleop.linear_step > 0) || !(c.teleop.angular_step > 0) || !(c.teleop.v_max > 0) ||
          !(c.teleop.w_max > 0))
        throw ValidationError(wt + ": steps and limits must be > 0");
    }
  }
  cfg.duration = opt_number(j, "duration", cfg.duration, source);
  cfg.base_dt = opt_number(j, "base_dt", cfg.base_dt, source);
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw ParseError(source + ".seed: expected a non-negative integer");
    cfg.seed = j["seed"].get<std::uint64_t>();
  }
  cfg.per_frame_snapshot = j.value("per_frame_snapshot", false);
  cfg.imu.seed = cfg.seed;
  return cfg;
}

/// Resolved configuration as recorded in bundle manifests. It parses back
/// through parse_run_config to the same values bit for bit (the scene path
/// is absolute; command lists are not embedded).
inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
  using nlohmann::json;
  const auto& l = cfg.lidar;
  const auto& m = l.mount;
  json lidar = {{"name", l.name},
                {"pattern", l.pattern == PatternKind::mechanical ? "mechanical" : "risley"},
                {"fov_h", l.fov_h_deg},
                {"fov_v", l.fov_v_deg},
                {"point_rate", l.point_rate},
                {"max_range", l.max_range},
                {"frame_rate", l.frame_rate},
                {"range_noise_sigma", l.range_noise_sigma},
                {"mount",
                 {{"xyz", {m.position.x(), m.position.y(), m.position.z()}},
                  {"quat_wxyz", {m.orientation.w(), m.orientation.x(), m.orientation.y(), m.orientation.z()}}}}};
  if (l.pattern == PatternKind::mechanical) {
    lidar["channels"] = l.channels;
    lidar["elevation_min"] = l.elevation_min_deg;
    lidar["elevation_max"] = l.elevation_max_deg;
  } else {
    lidar["prism_f1"] = l.prism_f1_hz;
    lidar["prism_f2"] = l.prism_f2_hz;
    lidar["prism_phase"] = l.prism_phase_rad;
  }
  const auto& c = cfg.control;
  json control = {{"mode", to_string(c.mode)},
                  {"cruise_speed", c.cruise_speed},
                  {"heading_gain", c.heading_gain},
                  {"w_max", c.w_max},
                  {"switch_threshold", c.switch_threshold},
                  {"teleop",
                   {{"linear_step", c.teleop.linear_step},
                    {"angular_step", c.teleop.angular_step},
                    {"v_max", c.teleop.v_max},
                    {"w_max", c.teleop.w_max}}}};
  if (!c.path.empty()) {
    json path = json::array();
    for (const auto& p : c.path) path.push_back({p.x(), p.y()});
    control["path"] = path;
  }
  std::error_code ec;
  auto scene = std::filesystem::absolute(cfg.scene_path, ec).lexically_normal();
  return json{{"scene", (ec ? cfg.scene_path : scene).generic_string()},
              {"lidar", lidar},
              {"imu",
               {{"rate", cfg.imu.rate},
                {"gyro_noise_sigma", cfg.imu.gyro_noise_sigma},
                {"accel_noise_sigma", cfg.imu.accel_noise_sigma},
                {"gyro_bias", {cfg.imu.gyro_bias.x(), cfg.imu.gyro_bias.y(), cfg.imu.gyro_bias.z()}},
                {"accel_bias", {cfg.imu.accel_bias.x(), cfg.imu.accel_bias.y(), cfg.imu.accel_bias.z()}},
                {"gravity", cfg.imu.gravity}}},
              {"chassis",
               {{"wheel_radius", cfg.chassis.wheel_radius},
                {"track_width", cfg.chassis.track_width},
                {"max_wheel_speed", cfg.chassis.max_wheel_speed}}},
              {"base_height", cfg.base_height},
              {"initial_pose", {{"x", cfg.initial.x}, {"y", cfg.initial.y}, {"yaw_rad", cfg.initial.yaw}}},
              {"control", control},
              {"duration", cfg.duration},
              {"base_dt", cfg.base_dt},
              {"seed", cfg.seed},
              {"per_frame_snapshot", cfg.per_frame_snapshot}};
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  const auto text = detail::read_text_file(path, "config file");
  return parse_run_config(detail::parse_json_text(text, path.string()), path.parent_path(), path.string());
}

}  // namespace lidarsim
