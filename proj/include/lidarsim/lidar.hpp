#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "lidarsim/error.hpp"
#include "lidarsim/pose.hpp"
#include "lidarsim/random.hpp"
#include "lidarsim/scene.hpp"

namespace lidarsim {

enum class PatternKind { mechanical, risley };

struct LidarModel {
  std::string name = "custom";
  PatternKind pattern = PatternKind::mechanical;
  double fov_h_deg = 360.0;
  double fov_v_deg = 41.34;
  // mechanical ring layout
  int channels = 32;
  double elevation_min_deg = -30.67;
  double elevation_max_deg = 10.67;
  // risley prism rates and phase
  double prism_f1_hz = 120.22;
  double prism_f2_hz = -80.23;
  double prism_phase_rad = 0.0;

  double point_rate = 640000.0;  // points/s
  double max_range = 100.0;      // m
  double frame_rate = 10.0;      // Hz
  double range_noise_sigma = 0.01;
  Pose mount;  // sensor frame in body frame

  double frame_period() const { return 1.0 / frame_rate; }

  /// Per-frame sample budget (floored).
  std::size_t frame_budget() const {
    return static_cast<std::size_t>(std::floor(point_rate / frame_rate + 1e-9));
  }

  void validate() const {
    if (!(fov_h_deg > 0.0 && fov_h_deg <= 360.0)) throw ValidationError(name + ": fov_h must be in (0, 360]");
    if (!(fov_v_deg > 0.0)) throw ValidationError(name + ": fov_v must be > 0");
    if (!(point_rate > 0.0) || !(frame_rate > 0.0)) throw ValidationError(name + ": rates must be > 0");
    if (!(max_range > 0.0)) throw ValidationError(name + ": max_range must be > 0");
    if (!(range_noise_sigma >= 0.0)) throw ValidationError(name + ": range_noise_sigma must be >= 0");
    if (pattern == PatternKind::mechanical &&
        (channels < 1 || !(elevation_max_deg >= elevation_min_deg)))
      throw ValidationError(name + ": bad ring layout");
  }
};

/// Built-in sensors. Solid-state FoV, point rate and range follow the Livox
/// Avia / HAP / Horizon datasheet values; the mechanical rate is a default.
inline std::optional<LidarModel> builtin_lidar(const std::string& name) {
  LidarModel m;
  m.name = name;
  if (name == "velodyne32") {
    m.pattern = PatternKind::mechanical;
    m.fov_h_deg = 360.0;
    m.fov_v_deg = 41.34;
    m.point_rate = 640000.0;
    m.max_range = 100.0;
    m.mount = Pose::from_xyz_rpy(Vec3(0.0, 0.0, 0.35), 0, 0, 0);
    return m;
  }
  m.pattern = PatternKind::risley;
  m.mount = Pose::from_xyz_rpy(Vec3(0.18, 0.0, 0.30), 0, 0, 0);
  if (name == "avia") {
    m.fov_h_deg = 70.4;
    m.fov_v_deg = 77.2;
    m.point_rate = 240000.0;
    m.max_range = 450.0;
  } else if (name == "hap") {
    m.fov_h_deg = 120.0;
    m.fov_v_deg = 25.0;
    m.point_rate = 452000.0;
    m.max_range = 150.0;
  } else if (name == "horizon") {
    m.fov_h_deg = 81.7;
    m.fov_v_deg = 25.1;
    m.point_rate = 240000.0;
    m.max_range = 260.0;
  } else {
    return std::nullopt;
  }
  return m;
}

struct BeamSample {
  double dt = 0.0;  // s since frame start
  Vec3 direction = Vec3::UnitX();  // unit, sensor frame
};

inline Vec3 direction_from_az_el(double az_rad, double el_rad) {
  return {std::cos(el_rad) * std::cos(az_rad), std::cos(el_rad) * std::sin(az_rad),
          std::sin(el_rad)};
}

/// Spinning multi-ring schedule: column-major, channels fire in order within
/// a column, azimuth advancing uniformly across the frame period.
inline std::vector<BeamSample> mechanical_pattern(const LidarModel& m) {
  if (m.pattern != PatternKind::mechanical) throw PreconditionError("mechanical_pattern: not a mechanical model");
  const std::size_t budget = m.frame_budget();
  const std::size_t rings = static_cast<std::size_t>(m.channels);
  if (budget < rings) throw PreconditionError("mechanical_pattern: budget smaller than channel count");
  const std::size_t columns = budget / rings;
  const double az_step = m.fov_h_deg / static_cast<double>(columns);
  const double az_start = -0.5 * m.fov_h_deg;
  const double total = static_cast<double>(columns * rings);
  std::vector<double> elevations(rings);
  for (std::size_t i = 0; i < rings; ++i)
    elevations[i] = rings == 1 ? m.elevation_min_deg
                               : m.elevation_min_deg + (m.elevation_max_deg - m.elevation_min_deg) *
                                                           static_cast<double>(i) / static_cast<double>(rings - 1);
  std::vector<BeamSample> beams;
  beams.reserve(columns * rings);
  for (std::size_t c = 0; c < columns; ++c) {
    const double az = deg2rad(az_start + az_step * static_cast<double>(c));
    for (std::size_t r = 0; r < rings; ++r) {
      const double k = static_cast<double>(c * rings + r);
      beams.push_back({k / total * m.frame_period(), direction_from_az_el(az, deg2rad(elevations[r]))});
    }
  }
  return beams;
}

/// Unit deflection of a two-prism scanner at global time tau: the sum of two
/// half-length phasors rotating at f1 and f2. |u| <= 1.
inline Vec2 risley_deflection(const LidarModel& m, double tau) {
  const double a1 = 2.0 * kPi * m.prism_f1_hz * tau;
  const double a2 = 2.0 * kPi * m.prism_f2_hz * tau + m.prism_phase_rad;
  return {0.5 * (std::cos(a1) + std::cos(a2)), 0.5 * (std::sin(a1) + std::sin(a2))};
}

/// Non-repetitive rosette. Sample k of frame f fires at global time
/// f / frame_rate + k / point_rate; the deflection scales independently to
/// the half-FoVs around the sensor x axis.
inline std::vector<BeamSample> risley_pattern(const LidarModel& m, std::int64_t frame_index) {
  if (m.pattern != PatternKind::risley) throw PreconditionError("risley_pattern: not a risley model");
  const std::size_t budget = m.frame_budget();
  const double frame_start = static_cast<double>(frame_index) / m.frame_rate;
  const double half_h = deg2rad(0.5 * m.fov_h_deg);
  const double half_v = deg2rad(0.5 * m.fov_v_deg);
  std::vector<BeamSample> beams;
  beams.reserve(budget);
  for (std::size_t k = 0; k < budget; ++k) {
    const double dt = static_cast<double>(k) / m.point_rate;
    const Vec2 u = risley_deflection(m, frame_start + dt);
    beams.push_back({dt, direction_from_az_el(half_h * u.x(), half_v * u.y())});
  }
  return beams;
}

inline std::vector<BeamSample> beam_pattern(const LidarModel& m, std::int64_t frame_index) {
  return m.pattern == PatternKind::mechanical ? mechanical_pattern(m) : risley_pattern(m, frame_index);
}

struct CloudPoint {
  Vec3 xyz = Vec3::Zero();  // sensor frame at emission time, m
  double intensity = 0.0;
  double dt = 0.0;
};

struct PointCloudFrame {
  double t0 = 0.0;
  std::vector<CloudPoint> points;
};

struct LidarFrameOptions {
  std::uint64_t seed = 0;
  std::int64_t frame_index = 0;
  unsigned workers = 1;
  /// Freeze movers once at the frame start instead of per beam.
  bool per_frame_snapshot = false;
};

/// World pose of the sensor at an absolute time.
using SensorPoseFn = std::function<Pose(double)>;

/// Casts every beam of the frame from the sensor pose at its own emission
/// time (motion distortion) against the scene at that time, then applies
/// Gaussian range noise in beam order.
inline PointCloudFrame simulate_lidar_frame(const ScenePtr& scene, const SensorPoseFn& sensor_pose,
                                            const LidarModel& model, double t0,
                                            const std::vector<BeamSample>& beams,
                                            const LidarFrameOptions& opt) {
  const bool has_movers = !scene->movers().empty();
  const bool per_beam = has_movers && !opt.per_frame_snapshot;
  const SceneSnapshot frame_snapshot(scene, t0);

  struct Cast {
    bool hit = false;
    double range = 0.0;
    double intensity = 0.0;
  };
  std::vector<Cast> casts(beams.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const double t = t0 + beams[i].dt;
      const Pose pose = sensor_pose(t);
      const Vec3 dir = pose.rotate(beams[i].direction).normalized();
      std::optional<RayHit> hit;
      if (per_beam) {
        hit = SceneSnapshot(scene, t).raycast(pose.position, dir, model.max_range);
      } else {
        hit = frame_snapshot.raycast(pose.position, dir, model.max_range);
      }
      if (hit) casts[i] = {true, hit->range, std::max(0.0, -hit->normal.dot(dir))};
    }
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(opt.workers, 64));
  if (workers == 1 || beams.size() < 1024) {
    work(0, beams.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (beams.size() + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
      const std::size_t b = w * chunk;
      const std::size_t e = std::min(beams.size(), b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }

  PointCloudFrame frame;
  frame.t0 = t0;
  frame.points.reserve(beams.size());
  auto rng = make_stream(opt.seed, RngStream::lidar, static_cast<std::uint64_t>(opt.frame_index));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < beams.size(); ++i) {
    if (!casts[i].hit) continue;
    double range = casts[i].range;
    if (model.range_noise_sigma > 0.0) range += model.range_noise_sigma * noise(rng);
    if (!(range > 0.0) || range > model.max_range) continue;
    frame.points.push_back({range * beams[i].direction, casts[i].intensity, beams[i].dt});
  }
  return frame;
}

inline PointCloudFrame simulate_lidar_frame(const ScenePtr& scene, const SensorPoseFn& sensor_pose,
                                            const LidarModel& model, double t0,
                                            const LidarFrameOptions& opt) {
  return simulate_lidar_frame(scene, sensor_pose, model, t0, beam_pattern(model, opt.frame_index), opt);
}

}  // namespace lidarsim
