#include <gtest/gtest.h>

#include <set>

#include "lidarsim/lidar.hpp"
#include "test_util.hpp"

using namespace lidarsim;
using namespace testutil;

namespace {

std::pair<double, double> az_el_deg(const Vec3& d) {
  return {rad2deg(std::atan2(d.y(), d.x())), rad2deg(std::asin(std::clamp(d.z(), -1.0, 1.0)))};
}

}  // namespace

TEST(Lidar, BuiltinModels) {
  const auto avia = *builtin_lidar("avia");
  EXPECT_EQ(avia.frame_budget(), 24000u);
  EXPECT_DOUBLE_EQ(avia.fov_h_deg, 70.4);
  EXPECT_DOUBLE_EQ(avia.fov_v_deg, 77.2);
  EXPECT_DOUBLE_EQ(avia.frame_rate, 10.0);
  EXPECT_EQ(builtin_lidar("hap")->frame_budget(), 45200u);
  EXPECT_EQ(builtin_lidar("horizon")->frame_budget(), 24000u);
  EXPECT_EQ(builtin_lidar("velodyne32")->pattern, PatternKind::mechanical);
  EXPECT_FALSE(builtin_lidar("lidar9000"));
}

TEST(Lidar, RisleyPatternInsideFov) {
  for (const char* name : {"avia", "hap", "horizon"}) {
    const auto m = *builtin_lidar(name);
    for (std::int64_t f : {0, 1, 17}) {
      const auto beams = risley_pattern(m, f);
      ASSERT_EQ(beams.size(), m.frame_budget());
      for (const auto& b : beams) {
        const auto [az, el] = az_el_deg(b.direction);
        ASSERT_LE(std::abs(az), 0.5 * m.fov_h_deg + 1e-9) << name;
        ASSERT_LE(std::abs(el), 0.5 * m.fov_v_deg + 1e-9) << name;
        ASSERT_GE(b.dt, 0.0);
        ASSERT_LT(b.dt, m.frame_period());
      }
    }
  }
}

TEST(Lidar, RisleyFramesDifferAndCoverageGrows) {
  const auto m = *builtin_lidar("avia");
  const auto f0 = risley_pattern(m, 0);
  const auto f1 = risley_pattern(m, 1);
  EXPECT_NE(f0[0].direction, f1[0].direction);
  std::set<std::pair<int, int>> cells;
  std::size_t prev = 0;
  for (std::int64_t f = 0; f < 20; ++f) {
    for (const auto& b : risley_pattern(m, f)) {
      const auto [az, el] = az_el_deg(b.direction);
      cells.insert({static_cast<int>(std::floor(az)), static_cast<int>(std::floor(el))});
    }
    if (f > 0) {
      EXPECT_GT(cells.size(), prev) << "frame " << f;
    }
    prev = cells.size();
  }
}

TEST(Lidar, MechanicalPatternLayout) {
  const auto m = *builtin_lidar("velodyne32");
  const auto beams = mechanical_pattern(m);
  const std::size_t columns = m.frame_budget() / 32;
  ASSERT_EQ(beams.size(), columns * 32);
  EXPECT_NEAR(az_el_deg(beams[0].direction).first, -180.0, 1e-9);
  EXPECT_NEAR(az_el_deg(beams[0].direction).second, -30.67, 1e-9);
  EXPECT_NEAR(az_el_deg(beams[31].direction).second, 10.67, 1e-9);
  EXPECT_DOUBLE_EQ(beams[0].dt, 0.0);
  for (std::size_t i = 1; i < beams.size(); ++i) ASSERT_GT(beams[i].dt, beams[i - 1].dt);
  EXPECT_THROW(risley_pattern(m, 0), PreconditionError);
}

TEST(Lidar, NoiselessPointsLieOnGeometry) {
  const auto scene = load_scene(scene_file("room"));
  auto m = *builtin_lidar("avia");
  m.range_noise_sigma = 0.0;
  // sensor moving and turning during the frame
  const SensorPoseFn pose = [](double t) { return Pose::planar(-2.0 + 0.5 * t, -1.0, 0.4, 0.3 + 0.8 * t); };
  LidarFrameOptions opt;
  opt.frame_index = 3;
  const auto frame = simulate_lidar_frame(scene, pose, m, 0.3, opt);
  ASSERT_GT(frame.points.size(), 20000u);
  const auto snap = scene_at(scene, 0.0);
  double worst = 0.0;
  for (const auto& p : frame.points) {
    const Vec3 w = pose(frame.t0 + p.dt).transform_point(p.xyz);
    worst = std::max(worst, dist_to_scene(snap, w));
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(Lidar, NoiseIsSeededAndWorkerIndependent) {
  const auto scene = load_scene(scene_file("room"));
  const auto m = *builtin_lidar("avia");
  const SensorPoseFn pose = [](double) { return Pose::planar(0, 0, 0.4, 0.0); };
  LidarFrameOptions a;
  a.seed = 9;
  a.frame_index = 5;
  LidarFrameOptions b = a;
  b.workers = 4;
  LidarFrameOptions c = a;
  c.seed = 10;
  const auto fa = simulate_lidar_frame(scene, pose, m, 0.5, a);
  const auto fb = simulate_lidar_frame(scene, pose, m, 0.5, b);
  const auto fc = simulate_lidar_frame(scene, pose, m, 0.5, c);
  ASSERT_EQ(fa.points.size(), fb.points.size());
  for (std::size_t i = 0; i < fa.points.size(); ++i) ASSERT_EQ(fa.points[i].xyz, fb.points[i].xyz);
  EXPECT_NE(fa.points[0].xyz, fc.points[0].xyz);
}

TEST(Lidar, MaxRangeDropsPoints) {
  const auto scene = load_scene(scene_file("room"));
  auto m = *builtin_lidar("avia");
  m.range_noise_sigma = 0.0;
  m.max_range = 1.0;
  const SensorPoseFn pose = [](double) { return Pose::planar(0, 0, 1.5, 0.0); };
  const auto frame = simulate_lidar_frame(scene, pose, m, 0.0, LidarFrameOptions{});
  EXPECT_TRUE(frame.points.empty());
}

TEST(Lidar, IntensityIsIncidenceCosine) {
  GeometryPrimitive g;
  g.kind = PrimitiveKind::plane;
  SceneObject o{"ground", g, std::nullopt};
  const auto scene = std::make_shared<const Scene>("flat", std::vector<SceneObject>{o});
  auto m = *builtin_lidar("avia");
  m.range_noise_sigma = 0.0;
  const SensorPoseFn pose = [](double) { return Pose::from_xyz_rpy(Vec3(0, 0, 1), 0, kPi / 2, 0); };  // looking down
  const auto frame = simulate_lidar_frame(scene, pose, m, 0.0, LidarFrameOptions{});
  ASSERT_FALSE(frame.points.empty());
  for (const auto& p : frame.points) {
    const Vec3 d = pose(0).rotate(p.xyz.normalized());
    ASSERT_NEAR(p.intensity, -d.z(), 1e-12);
  }
}
