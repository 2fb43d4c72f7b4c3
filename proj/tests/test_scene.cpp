#include <gtest/gtest.h>

#include <chrono>
#include <random>

#include "lidarsim/scene.hpp"
#include "test_util.hpp"

using namespace lidarsim;
using namespace testutil;

namespace {

const char* kFiveObjects = R"({
  "name": "five",
  "objects": [
    {"id": "ground", "kind": "plane"},
    {"id": "crate", "kind": "box", "half_extents": [1, 0.5, 0.75], "pose": {"xyz": [4, 1, 0.75], "rpy_deg": [0, 0, 30]}},
    {"id": "drum", "kind": "cylinder", "radius": 0.4, "height": 1.2, "pose": {"xyz": [-3, 2, 0.6]}},
    {"id": "ball", "kind": "sphere", "radius": 0.8, "pose": {"xyz": [0, -4, 1.5]}},
    {"id": "rock", "kind": "mesh", "mesh_file": "meshes/rock.obj", "scale": 2.0, "pose": {"xyz": [-2, -2, 0.5], "rpy_deg": [5, 10, 40]}}
  ]})";

ScenePtr five_object_scene() {
  return make_scene(parse_scene_text(kFiveObjects, "five", source_dir() / "scenes"));
}

}  // namespace

TEST(Scene, BundledScenesLoad) {
  for (const char* name : {"room", "corridor", "yard", "flatland", "depot"}) {
    const auto doc = read_scene_document(scene_file(name));
    EXPECT_TRUE(doc.violations.empty()) << name;
    EXPECT_NO_THROW(make_scene(doc)) << name;
  }
  EXPECT_EQ(load_scene(scene_file("depot"))->movers().size(), 2u);
}

TEST(Scene, ParseErrorsNameLocation) {
  try {
    parse_scene_text("{\"objects\": [\n  {\"id\": \"a\", }\n]}", "bad.json", ".");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.json:2:"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_scene_text(R"({"objects": [{"id": "a", "kind": "torus"}]})", "s", "."), ParseError);
  EXPECT_THROW(parse_scene_text(R"({"objects": [{"kind": "box"}]})", "s", "."), ParseError);
  EXPECT_THROW(parse_scene_text(R"({"name": "x"})", "s", "."), ParseError);
}

TEST(Scene, DuplicateIdsAndBadSizesAreViolations) {
  const auto doc = parse_scene_text(
      R"({"objects": [{"id": "a", "kind": "sphere", "radius": 1},
                      {"id": "a", "kind": "sphere", "radius": -1}]})",
      "s", ".");
  ASSERT_EQ(doc.violations.size(), 2u);
  EXPECT_NE(doc.violations[0].find("duplicate object id 'a'"), std::string::npos);
  EXPECT_THROW(make_scene(doc), ValidationError);
}

TEST(Scene, DegenerateTriangleListedWithIndex) {
  const auto dir = temp_dir("degenerate");
  write_text(dir / "m.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 2 0 0\nf 1 2 3\nf 1 2 4\n");
  write_text(dir / "s.json", R"({"objects": [{"id": "m", "kind": "mesh", "mesh_file": "m.obj"}]})");
  const auto doc = read_scene_document(dir / "s.json");
  ASSERT_EQ(doc.violations.size(), 1u);
  EXPECT_NE(doc.violations[0].find("triangle 1"), std::string::npos) << doc.violations[0];
  fs::remove_all(dir);
}

TEST(Scene, MissingMeshFileIsIoError) {
  EXPECT_THROW(parse_scene_text(R"({"objects": [{"id": "m", "kind": "mesh", "mesh_file": "nope.obj"}]})", "s", "/"),
               IoError);
}

TEST(Scene, MotionScriptInterpolatesAndLoops) {
  const auto doc = parse_scene_text(R"({"objects": [{"id": "c", "kind": "box", "half_extents": [1,1,1],
      "motion": {"loop": true, "waypoints": [{"t": 0, "xyz": [0,0,0]}, {"t": 2, "xyz": [4,0,0]}, {"t": 4, "xyz": [0,0,0]}]}}]})",
                                    "s", ".");
  const auto scene = make_scene(doc);
  EXPECT_NEAR(scene_at(scene, 1.0).object_pose(0).position.x(), 2.0, 1e-12);
  EXPECT_NEAR(scene_at(scene, 5.0).object_pose(0).position.x(), 2.0, 1e-12);
  EXPECT_NEAR(scene_at(scene, 3.0).object_pose(0).position.x(), 2.0, 1e-12);
  EXPECT_THROW(scene_at(scene, -1.0), PreconditionError);
  const auto bad = parse_scene_text(R"({"objects": [{"id": "c", "kind": "box", "half_extents": [1,1,1],
      "motion": {"waypoints": [{"t": 1, "xyz": [0,0,0]}, {"t": 1, "xyz": [1,0,0]}]}}]})",
                                    "s", ".");
  EXPECT_EQ(bad.violations.size(), 2u);
}

TEST(Scene, RaycastRejectsBadArguments) {
  const auto snap = scene_at(five_object_scene(), 0.0);
  EXPECT_THROW(snap.raycast(Vec3::Zero(), Vec3(1, 1, 0), 10), PreconditionError);
  EXPECT_THROW(snap.raycast(Vec3::Zero(), Vec3(1, 0, 0), 0), PreconditionError);
}

TEST(Scene, RaycastAnalyticCases) {
  const auto snap = scene_at(five_object_scene(), 0.0);
  // straight down onto the ground
  const auto g = snap.raycast(Vec3(10, 10, 2), Vec3(0, 0, -1), 100);
  ASSERT_TRUE(g);
  EXPECT_EQ(g->object_id, "ground");
  EXPECT_NEAR(g->range, 2.0, 1e-9);
  // horizontal at the sphere centre
  const auto b = snap.raycast(Vec3(0, 0, 1.5), Vec3(0, -1, 0), 100);
  ASSERT_TRUE(b);
  EXPECT_EQ(b->object_id, "ball");
  EXPECT_NEAR(b->range, 4.0 - 0.8, 1e-9);
  EXPECT_NEAR((b->normal - Vec3(0, 1, 0)).norm(), 0.0, 1e-9);
  // nothing up there
  EXPECT_FALSE(snap.raycast(Vec3(0, 0, 1), Vec3(0, 0, 1), 100));
  // max range cuts the hit
  EXPECT_FALSE(snap.raycast(Vec3(0, 0, 1.5), Vec3(0, -1, 0), 3.0));
}

TEST(Scene, AcceleratedMatchesExhaustive) {
  const auto snap = scene_at(five_object_scene(), 0.0);
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> pos(-6, 6), h(0.05, 3.0), dir(-1, 1);
  for (int i = 0; i < 10000; ++i) {
    const Vec3 o(pos(rng), pos(rng), h(rng));
    const Vec3 d = Vec3(dir(rng), dir(rng), dir(rng)).normalized();
    const auto a = snap.raycast(o, d, 50);
    const auto e = snap.raycast_exhaustive(o, d, 50);
    ASSERT_EQ(a.has_value(), e.has_value()) << i;
    if (a) {
      ASSERT_EQ(a->range, e->range) << i;
      ASSERT_EQ(a->object_index, e->object_index) << i;
      ASSERT_EQ(a->point, e->point) << i;
    }
  }
}

TEST(Scene, HitPointsLieOnSurfaces) {
  const auto snap = scene_at(five_object_scene(), 0.0);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> pos(-6, 6), dir(-1, 1);
  int hits = 0;
  for (int i = 0; i < 2000; ++i) {
    const Vec3 o(pos(rng), pos(rng), 1.0);
    const auto r = snap.raycast(o, Vec3(dir(rng), dir(rng), dir(rng)).normalized(), 50);
    if (!r) continue;
    ++hits;
    EXPECT_LT(dist_to_scene(snap, r->point), 1e-9);
  }
  EXPECT_GT(hits, 1000);
}

TEST(Scene, MoverIsHitAtItsScriptedPosition) {
  const auto scene = load_scene(scene_file("depot"));
  // cart: y = 3, x from -6 (t=0) to 6 (t=12)
  for (double t : {0.0, 3.0, 6.0}) {
    const double x = -6.0 + t;
    const auto hit = scene_at(scene, t).raycast(Vec3(x, 0, 0.55), Vec3(0, 1, 0), 50);
    ASSERT_TRUE(hit);
    EXPECT_EQ(hit->object_id, "cart");
    EXPECT_NEAR(hit->range, 3.0 - 0.4, 1e-9);
  }
}
