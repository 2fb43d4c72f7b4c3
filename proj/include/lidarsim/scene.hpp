#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "lidarsim/bvh.hpp"
#include "lidarsim/error.hpp"
#include "lidarsim/geometry.hpp"
#include "lidarsim/obj_mesh.hpp"
#include "lidarsim/pose.hpp"

namespace lidarsim {

struct MotionWaypoint {
  double t = 0.0;
  Pose pose;
};

/// Scripted rigid motion: piecewise-linear position, slerped orientation.
struct MotionScript {
  std::vector<MotionWaypoint> waypoints;
  bool loop = false;

  double period() const { return waypoints.empty() ? 0.0 : waypoints.back().t; }

  Pose pose_at(double t) const {
    if (waypoints.size() == 1) return waypoints.front().pose;
    const double span = period();
    if (loop && span > 0.0) {
      t = std::fmod(t, span);
      if (t < 0.0) t += span;
    }
    if (t <= waypoints.front().t) return waypoints.front().pose;
    if (t >= span) return waypoints.back().pose;
    // first waypoint strictly after t
    auto it = std::upper_bound(waypoints.begin(), waypoints.end(), t,
                               [](double v, const MotionWaypoint& w) { return v < w.t; });
    const MotionWaypoint& b = *it;
    const MotionWaypoint& a = *(it - 1);
    if (t == a.t) return a.pose;
    return interpolate(a.pose, b.pose, (t - a.t) / (b.t - a.t));
  }
};

struct SceneObject {
  std::string id;
  GeometryPrimitive geometry;
  std::optional<MotionScript> motion;

  bool dynamic() const { return motion.has_value(); }
};

struct RayHit {
  double range = 0.0;
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();  // unit, faces the incoming ray
  std::uint32_t object_index = 0;
  std::string_view object_id;
};

class SceneSnapshot;

/// Immutable collection of objects plus a BVH over every static, bounded
/// piece. Unbounded planes and scripted movers are tested exhaustively.
class Scene {
 public:
  Scene(std::string name, std::vector<SceneObject> objects)
      : name_(std::move(name)), objects_(std::move(objects)) {
    std::set<std::string> ids;
    for (const auto& o : objects_) {
      if (!ids.insert(o.id).second) throw ValidationError("duplicate object id '" + o.id + "'");
    }
    build_index();
  }

  const std::string& name() const { return name_; }
  const std::vector<SceneObject>& objects() const { return objects_; }
  const std::vector<std::uint32_t>& movers() const { return movers_; }
  std::size_t static_piece_count() const { return static_pieces_.size(); }
  const Bvh& bvh() const { return bvh_; }

  std::size_t triangle_count() const {
    std::size_t n = 0;
    for (const auto& o : objects_)
      if (o.geometry.kind == PrimitiveKind::mesh) n += o.geometry.triangles.size();
    return n;
  }

 private:
  friend class SceneSnapshot;

  struct Piece {
    std::uint32_t object = 0;
    std::uint32_t piece = 0;
  };

  void build_index() {
    std::vector<Aabb> boxes;
    world_triangles_.resize(objects_.size());
    inverse_poses_.resize(objects_.size());
    for (std::uint32_t i = 0; i < objects_.size(); ++i) {
      const auto& obj = objects_[i];
      if (obj.dynamic()) {
        movers_.push_back(i);
        continue;
      }
      const Pose& pose = obj.geometry.local_pose;
      inverse_poses_[i] = pose.inverse();
      if (obj.geometry.kind == PrimitiveKind::mesh) {
        auto& tris = world_triangles_[i];
        tris.reserve(obj.geometry.triangles.size());
        for (const auto& t : obj.geometry.triangles)
          tris.push_back({pose.transform_point(t[0]), pose.transform_point(t[1]),
                          pose.transform_point(t[2])});
      }
      for (std::uint32_t p = 0; p < obj.geometry.piece_count(); ++p) {
        const auto local = local_bounds(obj.geometry, p);
        if (!local) {
          unbounded_.push_back({i, p});
          continue;
        }
        Aabb world;
        if (obj.geometry.kind == PrimitiveKind::mesh) {
          for (const auto& v : world_triangles_[i][p]) world.extend(v);
        } else {
          world = transform_bounds(*local, pose);
        }
        // padding keeps pruning conservative against rounding in slab tests
        const double pad = 1e-6 + 1e-9 * (world.hi - world.lo).cwiseAbs().maxCoeff();
        boxes.push_back(world.padded(pad));
        static_pieces_.push_back({i, p});
      }
    }
    bvh_ = Bvh(std::move(boxes));
  }

  std::string name_;
  std::vector<SceneObject> objects_;
  std::vector<std::uint32_t> movers_;
  std::vector<Piece> static_pieces_;  // indexed like BVH items
  std::vector<Piece> unbounded_;
  std::vector<std::vector<Triangle>> world_triangles_;
  std::vector<Pose> inverse_poses_;
  Bvh bvh_;
};

using ScenePtr = std::shared_ptr<const Scene>;

/// Scene with every scripted mover frozen at one instant. Immutable and safe
/// to raycast from many threads.
class SceneSnapshot {
 public:
  SceneSnapshot(ScenePtr scene, double t) : scene_(std::move(scene)), t_(t) {
    const auto& objs = scene_->objects();
    mover_world_.reserve(scene_->movers().size());
    mover_inverse_.reserve(scene_->movers().size());
    for (const auto idx : scene_->movers()) {
      const auto& obj = objs[idx];
      const Pose world = obj.motion->pose_at(t) * obj.geometry.local_pose;
      mover_world_.push_back(world);
      mover_inverse_.push_back(world.inverse());
    }
  }

  double time() const { return t_; }
  const Scene& scene() const { return *scene_; }
  const ScenePtr& scene_ptr() const { return scene_; }

  /// World placement of an object at this instant.
  Pose object_pose(std::uint32_t object) const {
    const auto& movers = scene_->movers();
    for (std::size_t m = 0; m < movers.size(); ++m)
      if (movers[m] == object) return mover_world_[m];
    return scene_->objects()[object].geometry.local_pose;
  }

  /// Nearest hit within max_range using the BVH for static geometry.
  std::optional<RayHit> raycast(const Vec3& origin, const Vec3& direction,
                                double max_range) const {
    check_ray(direction, max_range);
    const Ray ray{origin, direction};
    Best best(max_range);
    for (const auto& pc : scene_->unbounded_) test_static(ray, pc.object, pc.piece, best);
    double t_best = best.t;
    scene_->bvh_.traverse(ray, t_best, [&](std::uint32_t item) {
      const auto& pc = scene_->static_pieces_[item];
      test_static(ray, pc.object, pc.piece, best);
      t_best = best.t;
    });
    test_movers(ray, best);
    return finish(ray, best);
  }

  /// Same contract as raycast() without the acceleration structure.
  std::optional<RayHit> raycast_exhaustive(const Vec3& origin, const Vec3& direction,
                                           double max_range) const {
    check_ray(direction, max_range);
    const Ray ray{origin, direction};
    Best best(max_range);
    const auto& objs = scene_->objects();
    for (std::uint32_t i = 0; i < objs.size(); ++i) {
      if (objs[i].dynamic()) continue;
      for (std::uint32_t p = 0; p < objs[i].geometry.piece_count(); ++p)
        test_static(ray, i, p, best);
    }
    test_movers(ray, best);
    return finish(ray, best);
  }

 private:
  struct Best {
    explicit Best(double max_range) : t(max_range) {}
    double t;
    bool found = false;
    std::uint32_t object = 0;
    std::uint32_t piece = 0;
    Vec3 normal = Vec3::UnitZ();

    // order: range, then object index, then piece index
    void consider(double cand_t, std::uint32_t obj, std::uint32_t pc, const Vec3& n) {
      if (cand_t > t) return;
      if (found && cand_t == t && (obj > object || (obj == object && pc >= piece))) return;
      t = cand_t;
      object = obj;
      piece = pc;
      normal = n;
      found = true;
    }
  };

  static void check_ray(const Vec3& direction, double max_range) {
    if (!(max_range > 0.0)) throw PreconditionError("raycast: max_range must be > 0");
    if (std::abs(direction.norm() - 1.0) > 1e-9)
      throw PreconditionError("raycast: direction must be a unit vector");
  }

  void test_static(const Ray& ray, std::uint32_t obj, std::uint32_t piece, Best& best) const {
    const auto& g = scene_->objects()[obj].geometry;
    if (g.kind == PrimitiveKind::mesh) {
      if (auto h = intersect_triangle(scene_->world_triangles_[obj][piece], ray))
        best.consider(h->t, obj, piece, h->normal);
      return;
    }
    const Pose& inv = scene_->inverse_poses_[obj];
    const Ray local{inv.transform_point(ray.origin), inv.rotate(ray.direction)};
    if (auto h = intersect_local(g, piece, local))
      best.consider(h->t, obj, piece, g.local_pose.rotate(h->normal));
  }

  void test_movers(const Ray& ray, Best& best) const {
    const auto& movers = scene_->movers();
    for (std::size_t m = 0; m < movers.size(); ++m) {
      const std::uint32_t obj = movers[m];
      const auto& g = scene_->objects()[obj].geometry;
      const Pose& inv = mover_inverse_[m];
      const Ray local{inv.transform_point(ray.origin), inv.rotate(ray.direction)};
      for (std::uint32_t p = 0; p < g.piece_count(); ++p) {
        if (auto h = intersect_local(g, p, local))
          best.consider(h->t, obj, p, mover_world_[m].rotate(h->normal));
      }
    }
  }

  std::optional<RayHit> finish(const Ray& ray, const Best& best) const {
    if (!best.found) return std::nullopt;
    RayHit hit;
    hit.range = best.t;
    hit.point = ray.origin + best.t * ray.direction;
    hit.normal = best.normal.normalized();
    if (hit.normal.dot(ray.direction) > 0.0) hit.normal = -hit.normal;
    hit.object_index = best.object;
    hit.object_id = scene_->objects()[best.object].id;
    return hit;
  }

  ScenePtr scene_;
  double t_;
  std::vector<Pose> mover_world_;
  std::vector<Pose> mover_inverse_;
};

inline SceneSnapshot scene_at(const ScenePtr& scene, double t) {
  if (t < 0.0) throw PreconditionError("scene_at: t must be >= 0");
  return SceneSnapshot(scene, t);
}

// ---------------------------------------------------------------------------
// Scene file (.scene.json)

/// Result of reading a scene document: the objects that parsed, plus every
/// invariant violation found (empty when the scene is valid).
struct SceneDocument {
  std::string name;
  std::vector<SceneObject> objects;
  std::vector<std::string> violations;
};

namespace detail {

inline std::pair<int, int> line_col(const std::string& text, std::size_t byte) {
  int line = 1;
  int col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

inline Vec3 json_vec3(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3)
    throw ParseError(where + ": expected an array of 3 numbers");
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) throw ParseError(where + ": expected an array of 3 numbers");
    v[i] = j[i].get<double>();
  }
  return v;
}

inline double json_number(const nlohmann::json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw ParseError(where + ": missing field '" + key + "'");
  if (!obj[key].is_number()) throw ParseError(where + "." + key + ": expected a number");
  return obj[key].get<double>();
}

/// {xyz, rpy_deg} or {xyz, quat_wxyz}; a unit quaternion is taken verbatim
/// so recorded poses reload bit-exactly.
inline Pose json_pose(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw ParseError(where + ": expected an object");
  const Vec3 xyz = j.contains("xyz") ? json_vec3(j["xyz"], where + ".xyz") : Vec3::Zero();
  if (j.contains("quat_wxyz")) {
    if (j.contains("rpy_deg")) throw ParseError(where + ": give either rpy_deg or quat_wxyz, not both");
    const auto& q = j["quat_wxyz"];
    if (!q.is_array() || q.size() != 4) throw ParseError(where + ".quat_wxyz: expected an array of 4 numbers");
    for (const auto& c : q)
      if (!c.is_number()) throw ParseError(where + ".quat_wxyz: expected an array of 4 numbers");
    Pose p;
    p.position = xyz;
    p.orientation = Quat(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>());
    const double n = p.orientation.norm();
    if (!(n > 0.0)) throw ParseError(where + ".quat_wxyz: zero quaternion");
    if (std::abs(n - 1.0) > 1e-12) p.orientation.normalize();
    return p;
  }
  const Vec3 rpy = j.contains("rpy_deg") ? json_vec3(j["rpy_deg"], where + ".rpy_deg") : Vec3::Zero();
  return Pose::from_xyz_rpy_deg(xyz, rpy);
}

}  // namespace detail

/// Parses a scene document. Syntax and type errors throw ParseError (with
/// line/column or field path); invariant violations are collected.
inline SceneDocument parse_scene_text(const std::string& text, const std::string& source_name,
                                      const std::filesystem::path& base_dir) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = detail::line_col(text, e.byte == 0 ? 0 : e.byte - 1);
    throw ParseError(source_name + ":" + std::to_string(line) + ":" + std::to_string(col) +
                     ": " + e.what());
  }
  if (!doc.is_object()) throw ParseError(source_name + ": top level must be an object");
  SceneDocument out;
  out.name = doc.value("name", std::string("unnamed"));
  if (!doc.contains("objects") || !doc["objects"].is_array())
    throw ParseError(source_name + ": missing array field 'objects'");

  std::set<std::string> seen;
  std::size_t index = 0;
  for (const auto& jo : doc["objects"]) {
    const std::string where = "objects[" + std::to_string(index++) + "]";
    if (!jo.is_object()) throw ParseError(where + ": expected an object");
    if (!jo.contains("id") || !jo["id"].is_string())
      throw ParseError(where + ": missing string field 'id'");
    if (!jo.contains("kind") || !jo["kind"].is_string())
      throw ParseError(where + ": missing string field 'kind'");
    SceneObject obj;
    obj.id = jo["id"].get<std::string>();
    const std::string label = where + " ('" + obj.id + "')";
    if (!seen.insert(obj.id).second) out.violations.push_back("duplicate object id '" + obj.id + "'");

    const std::string kind = jo["kind"].get<std::string>();
    auto& g = obj.geometry;
    auto positive = [&](double v, const char* what) {
      if (!(v > 0.0) || !std::isfinite(v))
        out.violations.push_back("object '" + obj.id + "': " + what + " must be > 0");
    };
    if (kind == "box") {
      g.kind = PrimitiveKind::box;
      g.half_extents = detail::json_vec3(jo.value("half_extents", json()), label + ".half_extents");
      for (int a = 0; a < 3; ++a) positive(g.half_extents[a], "half_extents");
    } else if (kind == "sphere") {
      g.kind = PrimitiveKind::sphere;
      g.radius = detail::json_number(jo, "radius", label);
      positive(g.radius, "radius");
    } else if (kind == "cylinder") {
      g.kind = PrimitiveKind::cylinder;
      g.radius = detail::json_number(jo, "radius", label);
      g.height = detail::json_number(jo, "height", label);
      positive(g.radius, "radius");
      positive(g.height, "height");
    } else if (kind == "plane") {
      g.kind = PrimitiveKind::plane;
      if (jo.contains("half_size")) {
        const auto& hs = jo["half_size"];
        if (!hs.is_array() || hs.size() != 2 || !hs[0].is_number() || !hs[1].is_number())
          throw ParseError(label + ".half_size: expected an array of 2 numbers");
        g.plane_half_size = Vec2(hs[0].get<double>(), hs[1].get<double>());
        positive(g.plane_half_size->x(), "half_size");
        positive(g.plane_half_size->y(), "half_size");
      }
    } else if (kind == "mesh") {
      g.kind = PrimitiveKind::mesh;
      if (!jo.contains("mesh_file") || !jo["mesh_file"].is_string())
        throw ParseError(label + ": mesh needs string field 'mesh_file'");
      const auto mesh_path = base_dir / jo["mesh_file"].get<std::string>();
      g.triangles = load_obj(mesh_path);
      const double scale = jo.value("scale", 1.0);
      positive(scale, "scale");
      if (scale != 1.0)
        for (auto& tri : g.triangles)
          for (auto& v : tri) v *= scale;
      for (std::size_t t = 0; t < g.triangles.size(); ++t) {
        const double area = triangle_area(g.triangles[t]);
        if (!(area > 1e-12))
          out.violations.push_back("object '" + obj.id + "': triangle " + std::to_string(t) +
                                   " is degenerate (area " + std::to_string(area) + " m^2)");
      }
    } else {
      throw ParseError(label + ".kind: unknown kind '" + kind + "'");
    }
    g.local_pose = jo.contains("pose") ? detail::json_pose(jo["pose"], label + ".pose") : Pose{};

    if (jo.contains("motion")) {
      const auto& jm = jo["motion"];
      const std::string mw = label + ".motion";
      if (!jm.is_object() || !jm.contains("waypoints") || !jm["waypoints"].is_array())
        throw ParseError(mw + ": needs array field 'waypoints'");
      MotionScript script;
      script.loop = jm.value("loop", false);
      std::size_t wi = 0;
      for (const auto& jw : jm["waypoints"]) {
        const std::string ww = mw + ".waypoints[" + std::to_string(wi++) + "]";
        MotionWaypoint w;
        w.t = detail::json_number(jw, "t", ww);
        w.pose = detail::json_pose(jw, ww);
        script.waypoints.push_back(w);
      }
      if (script.waypoints.empty()) {
        out.violations.push_back("object '" + obj.id + "': motion has no waypoints");
      } else {
        if (script.waypoints.front().t != 0.0)
          out.violations.push_back("object '" + obj.id + "': first waypoint time must be 0");
        for (std::size_t i = 1; i < script.waypoints.size(); ++i)
          if (!(script.waypoints[i].t > script.waypoints[i - 1].t))
            out.violations.push_back("object '" + obj.id + "': waypoint times must be strictly increasing (waypoint " +
                                     std::to_string(i) + ")");
      }
      obj.motion = std::move(script);
    }
    out.objects.push_back(std::move(obj));
  }
  return out;
}

inline SceneDocument read_scene_document(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scene file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scene_text(ss.str(), path.string(), path.parent_path());
}

inline ScenePtr make_scene(SceneDocument doc) {
  if (!doc.violations.empty()) {
    std::string msg = "invalid scene '" + doc.name + "':";
    for (const auto& v : doc.violations) msg += "\n  " + v;
    throw ValidationError(msg);
  }
  return std::make_shared<const Scene>(std::move(doc.name), std::move(doc.objects));
}

inline ScenePtr load_scene(const std::filesystem::path& path) {
  return make_scene(read_scene_document(path));
}

}  // namespace lidarsim
