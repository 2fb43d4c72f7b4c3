#include <gtest/gtest.h>

#include "lidarsim/engine.hpp"
#include "test_util.hpp"

using namespace lidarsim;
using namespace testutil;

namespace {

RunConfig room_config() {
  RunConfig cfg;
  cfg.scene_path = scene_file("room");
  cfg.duration = 10.0;
  cfg.control.mode = ControlMode::scripted;
  cfg.control.commands = {{0.0, {0.2, 0.0}}, {2.0, {0.3, 0.4}}, {6.0, {0.1, -0.3}}};
  return cfg;
}

}  // namespace

TEST(Engine, TenSecondRunCounts) {
  const auto cfg = room_config();
  Simulation sim(cfg, load_scene(cfg.scene_path));
  const auto s = sim.run();
  EXPECT_EQ(s.ground_truth_samples, 2000u);
  EXPECT_EQ(s.imu_samples, 2000u);
  EXPECT_EQ(s.frames, 100);
  EXPECT_DOUBLE_EQ(s.sim_time, 10.0);
  for (const auto& f : sim.streams().frames) EXPECT_LE(f.points.size(), 24000u);
  EXPECT_DOUBLE_EQ(sim.streams().frames[7].t0, 0.7);
  EXPECT_EQ(sim.streams().commands.size(), 3u);
}

TEST(Engine, PhaseOrderPerTick) {
  auto cfg = room_config();
  cfg.duration = 0.2;
  cfg.imu.rate = 100;  // every other tick
  SimulationOptions opt;
  opt.record_events = true;
  Simulation sim(cfg, load_scene(cfg.scene_path), opt);
  sim.run();
  const auto& ev = sim.events();
  std::vector<std::vector<EnginePhase>> per_tick(40);
  for (const auto& e : ev) per_tick[static_cast<std::size_t>(e.tick)].push_back(e.phase);
  using P = EnginePhase;
  EXPECT_EQ(per_tick[0], (std::vector<P>{P::control, P::kinematics, P::ground_truth, P::imu}));
  EXPECT_EQ(per_tick[1], (std::vector<P>{P::control, P::kinematics, P::ground_truth}));
  EXPECT_EQ(per_tick[19], (std::vector<P>{P::control, P::kinematics, P::ground_truth, P::lidar}));
  EXPECT_EQ(per_tick[38], (std::vector<P>{P::control, P::kinematics, P::ground_truth, P::imu}));
  EXPECT_EQ(per_tick[39], (std::vector<P>{P::control, P::kinematics, P::ground_truth, P::lidar}));
}

TEST(Engine, GroundTruthFollowsKinematics) {
  const auto cfg = room_config();
  Simulation sim(cfg, load_scene(cfg.scene_path));
  sim.run();
  RobotState s;
  s.x = cfg.initial.x;
  s.y = cfg.initial.y;
  const auto& gt = sim.streams().ground_truth;
  for (std::size_t k = 0; k < gt.size(); ++k) {
    ASSERT_EQ(gt[k].pose.position.x(), s.x);
    ASSERT_EQ(gt[k].pose.position.y(), s.y);
    s = step(s, gt[k].twist, cfg.base_dt);
  }
}

TEST(Engine, DeterministicAcrossWorkers) {
  auto cfg = room_config();
  cfg.duration = 1.0;
  cfg.seed = 3;
  SimulationOptions one, four;
  four.workers = 4;
  Simulation a(cfg, load_scene(cfg.scene_path), one), b(cfg, load_scene(cfg.scene_path), four);
  a.run();
  b.run();
  ASSERT_EQ(a.streams().frames.size(), b.streams().frames.size());
  for (std::size_t f = 0; f < a.streams().frames.size(); ++f) {
    const auto& pa = a.streams().frames[f].points;
    const auto& pb = b.streams().frames[f].points;
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) ASSERT_EQ(pa[i].xyz, pb[i].xyz);
  }
  for (std::size_t i = 0; i < a.streams().imu.size(); ++i)
    ASSERT_EQ(a.streams().imu[i].specific_force, b.streams().imu[i].specific_force);
}

TEST(Engine, TrackModeEndsWhenTrackerFinishes) {
  RunConfig cfg;
  cfg.scene_path = scene_file("flatland");
  cfg.control.mode = ControlMode::track;
  cfg.control.path = {{0, 0}, {1, 0}, {2, 0.5}};
  cfg.duration = 60;
  Simulation sim(cfg, load_scene(cfg.scene_path));
  const auto s = sim.run();
  EXPECT_TRUE(s.tracker_finished);
  EXPECT_FALSE(s.timed_out);
  EXPECT_LT(s.sim_time, 20.0);
  EXPECT_EQ(s.ticks % cfg.ticks_per_frame(), 0);
  EXPECT_FALSE(sim.streams().tracking.empty());
}

TEST(Engine, TrackModeTimeoutIsReported) {
  RunConfig cfg;
  cfg.scene_path = scene_file("flatland");
  cfg.control.mode = ControlMode::track;
  cfg.control.path = {{0, 0}, {10, 0}};
  cfg.duration = 2;
  Simulation sim(cfg, load_scene(cfg.scene_path));
  const auto s = sim.run();
  EXPECT_TRUE(s.timed_out);
  EXPECT_EQ(s.ticks, 400);
}

TEST(Engine, TeleopKeysAndLeavingTrack) {
  RunConfig cfg;
  cfg.scene_path = scene_file("flatland");
  cfg.control.mode = ControlMode::track;
  cfg.control.path = {{0, 0}, {5, 0}};
  Simulation sim(cfg, load_scene(cfg.scene_path));
  for (int i = 0; i < 5; ++i) sim.tick();
  EXPECT_DOUBLE_EQ(sim.last_command().v, 0.2);
  EXPECT_FALSE(sim.apply_key("x"));
  EXPECT_EQ(sim.config().control.mode, ControlMode::track);
  EXPECT_TRUE(sim.apply_key("forward"));
  EXPECT_EQ(sim.config().control.mode, ControlMode::teleop);
  sim.tick();
  EXPECT_DOUBLE_EQ(sim.last_command().v, cfg.control.teleop.linear_step);
}

TEST(Engine, PoseQueriesAreBoundedToRecordedTime) {
  const auto cfg = room_config();
  Simulation sim(cfg, load_scene(cfg.scene_path));
  for (int i = 0; i < 30; ++i) sim.tick();  // frame 0 done, inside frame 1
  EXPECT_NO_THROW(sim.pose_at(0.12));
  EXPECT_THROW(sim.pose_at(0.05), PreconditionError);  // previous window
  EXPECT_THROW(sim.body_state_at(0.2), PreconditionError);
  const auto mid = sim.body_state_at(0.0525);
  const auto& st = sim.states()[10];
  const auto expect = propagate(st, st.twist, 0.0525 - st.t);
  EXPECT_EQ(mid.x, expect.x);
  EXPECT_NEAR(mid.x, st.x + st.twist.v * 0.0025, 1e-9);
}

TEST(Engine, WarnsWhenStartingFarFromPath) {
  RunConfig cfg;
  cfg.scene_path = scene_file("flatland");
  cfg.control.mode = ControlMode::track;
  cfg.control.path = {{3, 0}, {5, 0}};
  Simulation sim(cfg, load_scene(cfg.scene_path));
  ASSERT_EQ(sim.warnings().size(), 1u);
  EXPECT_NE(sim.warnings()[0].find("0.5 m"), std::string::npos);
}

TEST(Engine, FrameSinkReceivesFramesInOrder) {
  auto cfg = room_config();
  cfg.duration = 0.5;
  std::vector<std::int64_t> seen;
  SimulationOptions opt;
  opt.frame_sink = [&](std::int64_t i, const PointCloudFrame& f) {
    seen.push_back(i);
    EXPECT_DOUBLE_EQ(f.t0, 0.1 * static_cast<double>(i));
  };
  Simulation sim(cfg, load_scene(cfg.scene_path), opt);
  sim.run();
  EXPECT_EQ(seen, (std::vector<std::int64_t>{0, 1, 2, 3, 4}));
  EXPECT_TRUE(sim.streams().frames.empty());
}
