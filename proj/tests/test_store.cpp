#include <gtest/gtest.h>

#include "lidarsim/sequence_store.hpp"
#include "test_util.hpp"

using namespace lidarsim;
using namespace testutil;

namespace {

struct SmallRun {
  RunConfig cfg;
  SimulationStreams streams;
};

const SmallRun& small_run() {
  static const SmallRun r = [] {
    SmallRun s;
    s.cfg.scene_path = scene_file("room");
    s.cfg.duration = 0.5;
    s.cfg.seed = 11;
    s.cfg.control.mode = ControlMode::scripted;
    s.cfg.control.commands = {{0.0, {0.25, 0.1}}, {0.2, {0.1, -0.2}}};
    Simulation sim(s.cfg, load_scene(s.cfg.scene_path));
    sim.run();
    s.streams = sim.streams();
    return s;
  }();
  return r;
}

fs::path write_small(const std::string& tag) {
  const fs::path dir = temp_dir(tag) / "bundle";
  write_bundle(dir, small_run().streams, {run_config_to_json(small_run().cfg), small_run().cfg.seed});
  return dir;
}

}  // namespace

TEST(Store, RoundTrip) {
  const fs::path dir = write_small("rt");
  for (const char* f : {"manifest.json", "ground_truth.txt", "imu.csv", "commands.log", "clouds/000000.bin",
                        "clouds/000004.bin"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  const auto b = read_bundle(dir);
  const auto& s = small_run().streams;
  EXPECT_TRUE(b.warnings.empty());
  ASSERT_EQ(b.ground_truth.size(), s.ground_truth.size());
  for (std::size_t i = 0; i < s.ground_truth.size(); ++i) {
    EXPECT_NEAR(b.ground_truth[i].t, s.ground_truth[i].t, 1e-9);
    EXPECT_LT((b.ground_truth[i].pose.position - s.ground_truth[i].pose.position).norm(), 2e-9);
  }
  ASSERT_EQ(b.imu.size(), s.imu.size());
  EXPECT_LT((b.imu[3].specific_force - s.imu[3].specific_force).norm(), 2e-9);
  ASSERT_EQ(b.commands.size(), s.commands.size());
  for (std::size_t i = 0; i < s.commands.size(); ++i) {
    EXPECT_EQ(b.commands[i].t, s.commands[i].t);
    EXPECT_EQ(b.commands[i].twist, s.commands[i].twist);
  }
  ASSERT_EQ(b.frames.size(), 5u);
  for (std::size_t f = 0; f < 5; ++f) {
    ASSERT_EQ(b.frames[f].points.size(), s.frames[f].points.size());
    EXPECT_EQ(b.frames[f].t0, s.frames[f].t0);
    for (std::size_t i = 0; i < s.frames[f].points.size(); i += 97) {
      const auto& p = s.frames[f].points[i];
      const auto& q = b.frames[f].points[i];
      EXPECT_EQ(q.xyz.x(), static_cast<double>(static_cast<float>(p.xyz.x())));
      EXPECT_EQ(q.dt, static_cast<double>(static_cast<float>(p.dt)));
    }
  }
  const auto cfg = parse_run_config(b.manifest["config"], dir, "manifest");
  EXPECT_EQ(run_config_to_json(cfg), run_config_to_json(small_run().cfg));
  EXPECT_EQ(b.manifest["counts"]["frames"], 5);
}

TEST(Store, IdenticalContentGivesIdenticalDigest) {
  EXPECT_EQ(bundle_digest(write_small("d1")), bundle_digest(write_small("d2")));
}

TEST(Store, TruncatedCloudNamesTheFrame) {
  const fs::path dir = write_small("trunc");
  const fs::path f = dir / "clouds" / "000003.bin";
  fs::resize_file(f, fs::file_size(f) - 7);
  try {
    read_bundle(dir);
    FAIL() << "expected an error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("frame 3"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos) << e.what();
  }
}

TEST(Store, MissingFrameIsReported) {
  const fs::path dir = write_small("missing");
  fs::remove(dir / "clouds" / "000002.bin");
  EXPECT_THROW(read_bundle(dir), ValidationError);
}

TEST(Store, EditedStreamFailsHashCheck) {
  const fs::path dir = write_small("hash");
  auto text = read_text(dir / "ground_truth.txt");
  text[20] = text[20] == '1' ? '2' : '1';
  write_text(dir / "ground_truth.txt", text);
  try {
    read_bundle(dir);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("ground_truth.txt"), std::string::npos);
  }
  ReadOptions lax;
  lax.verify_hashes = false;
  EXPECT_NO_THROW(read_bundle(dir, lax));
}

TEST(Store, NewerFormatVersionWarns) {
  const fs::path dir = write_small("ver");
  auto m = nlohmann::json::parse(read_text(dir / "manifest.json"));
  m["format_version"] = 7;
  write_text(dir / "manifest.json", m.dump(2));
  const auto b = read_bundle(dir);
  ASSERT_EQ(b.warnings.size(), 1u);
  EXPECT_NE(b.warnings[0].find("format_version 7"), std::string::npos);
  EXPECT_EQ(b.frames.size(), 5u);
}

TEST(Store, RefusesNonEmptyDirectory) {
  const fs::path dir = temp_dir("nonempty");
  write_text(dir / "keep.txt", "x");
  EXPECT_THROW(BundleWriter{dir}, IoError);
  EXPECT_EQ(read_text(dir / "keep.txt"), "x");
}

TEST(Store, FramesMustBeSequential) {
  BundleWriter w(temp_dir("seq") / "b");
  EXPECT_THROW(w.write_frame(1, {}), PreconditionError);
  w.write_frame(0, {});
  EXPECT_NO_THROW(w.write_frame(1, {}));
}

TEST(Store, TumRowErrors) {
  std::istringstream ok("# comment\n0 1 2 3 0 0 0 1\n\n0.1 1 2 3 0 0 0.7071067811865476 0.7071067811865476\n");
  const auto t = parse_tum(ok, "ok.txt");
  ASSERT_EQ(t.size(), 2u);
  EXPECT_NEAR(t[1].pose.yaw(), M_PI / 2, 1e-12);
  std::istringstream short_row("0 1 2 3 0 0 0 1\n0.1 1 2 3 0 0\n");
  try {
    parse_tum(short_row, "est.txt");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("est.txt: row 2"), std::string::npos) << e.what();
  }
  std::istringstream bad_q("0 1 2 3 0 0 0 0\n");
  EXPECT_THROW(parse_tum(bad_q, "q.txt"), ParseError);
  std::istringstream trailing("0 1 2 3 0 0 0 1 9\n");
  EXPECT_THROW(parse_tum(trailing, "t.txt"), ParseError);
  EXPECT_THROW(load_tum("/nonexistent/x.txt"), IoError);
}

TEST(Store, CloudCodecRejectsGarbage) {
  PointCloudFrame f;
  f.t0 = 1.5;
  f.points.push_back({Vec3(1, 2, 3), 0.5, 0.01});
  const auto bytes = encode_cloud(f);
  EXPECT_EQ(bytes.size(), kCloudHeaderSize + kCloudRecordSize);
  EXPECT_EQ(bytes.substr(0, 4), "MSPC");
  const auto d = decode_cloud(bytes, "x");
  EXPECT_EQ(d.frame.t0, 1.5);
  EXPECT_EQ(d.frame.points[0].xyz, Vec3(1, 2, 3));
  EXPECT_THROW(decode_cloud(bytes + "z", "x"), ParseError);
  EXPECT_THROW(decode_cloud("XXXX" + bytes.substr(4), "x"), ParseError);
  EXPECT_THROW(decode_cloud(bytes.substr(0, 10), "x"), ParseError);
}
