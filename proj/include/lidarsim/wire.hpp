#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "lidarsim/cloud_io.hpp"
#include "lidarsim/engine.hpp"
#include "lidarsim/error.hpp"
#include "lidarsim/scene.hpp"
#include "lidarsim/spline.hpp"

namespace lidarsim {

inline constexpr const char* kWireProtocol = "lidarsim-ws/1";
inline constexpr char kWireMagic[4] = {'M', 'S', 'W', 'E'};
inline constexpr std::size_t kWireHeaderSize = 4 + 8 + 8;
inline constexpr std::size_t kWireCloudCap = 20000;

// ---------------------------------------------------------------------------
// Cloud reduction for the wire

struct VoxelKey {
  std::int64_t x, y, z;
  bool operator==(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9e3779b97f4a7c15ULL;
    h ^= static_cast<std::uint64_t>(k.y) * 0xc2b2ae3d27d4eb4fULL + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) * 0x165667b19e3779f9ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

/// Keeps the earliest point (by dt, then input order) of every occupied voxel.
inline PointCloudFrame downsample_cloud(const PointCloudFrame& frame, double voxel) {
  if (!(voxel > 0.0)) throw PreconditionError("downsample_cloud: voxel must be > 0");
  std::vector<std::size_t> order(frame.points.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frame.points[a].dt < frame.points[b].dt; });
  std::unordered_set<VoxelKey, VoxelKeyHash> seen;
  seen.reserve(frame.points.size());
  PointCloudFrame out;
  out.t0 = frame.t0;
  for (std::size_t i : order) {
    const auto& p = frame.points[i];
    const VoxelKey k{static_cast<std::int64_t>(std::floor(p.xyz.x() / voxel)),
                     static_cast<std::int64_t>(std::floor(p.xyz.y() / voxel)),
                     static_cast<std::int64_t>(std::floor(p.xyz.z() / voxel))};
    if (seen.insert(k).second) out.points.push_back(p);
  }
  return out;
}

/// Frames within the cap go out unchanged; larger ones are voxel-filtered,
/// doubling the voxel until the cap holds.
inline PointCloudFrame prepare_wire_cloud(const PointCloudFrame& frame, double voxel = 0.05,
                                          std::size_t cap = kWireCloudCap) {
  if (frame.points.size() <= cap) return frame;
  double v = voxel;
  PointCloudFrame out = downsample_cloud(frame, v);
  while (out.points.size() > cap) {
    v *= 2.0;
    out = downsample_cloud(frame, v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Envelopes

struct Envelope {
  std::string type;
  std::uint64_t seq = 0;
  double t_sim = 0.0;
  nlohmann::json payload = nlohmann::json::object();
};

inline std::string encode_envelope(const Envelope& e) {
  return nlohmann::json{{"type", e.type}, {"seq", e.seq}, {"t_sim", e.t_sim}, {"payload", e.payload}}.dump();
}

/// Throws ParseError describing the first protocol violation.
inline Envelope decode_envelope(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed message: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("message must be an object");
  if (!j.contains("type") || !j["type"].is_string()) throw ParseError("message needs string field 'type'");
  if (!j.contains("seq") || !j["seq"].is_number_unsigned()) throw ParseError("message needs unsigned field 'seq'");
  Envelope e;
  e.type = j["type"].get<std::string>();
  e.seq = j["seq"].get<std::uint64_t>();
  if (j.contains("t_sim")) {
    if (!j["t_sim"].is_number()) throw ParseError("'t_sim' must be a number");
    e.t_sim = j["t_sim"].get<double>();
  }
  if (j.contains("payload")) e.payload = j["payload"];
  if (!e.payload.is_object()) throw ParseError("'payload' must be an object");
  return e;
}

/// Binary cloud message: "MSWE" | u64 seq | f64 t_sim | MSPC cloud bytes.
inline std::string encode_cloud_message(std::uint64_t seq, double t_sim, const PointCloudFrame& frame) {
  std::string out(kWireMagic, 4);
  detail::put_le<std::uint64_t>(out, seq);
  detail::put_f64(out, t_sim);
  out += encode_cloud(frame);
  return out;
}

struct CloudMessage {
  std::uint64_t seq = 0;
  double t_sim = 0.0;
  PointCloudFrame frame;
};

inline CloudMessage decode_cloud_message(std::string_view bytes) {
  if (bytes.size() < kWireHeaderSize || std::memcmp(bytes.data(), kWireMagic, 4) != 0)
    throw ParseError("cloud message: bad envelope header");
  CloudMessage m;
  m.seq = detail::get_le<std::uint64_t>(bytes.data() + 4);
  m.t_sim = detail::get_f64(bytes.data() + 12);
  m.frame = decode_cloud(bytes.substr(kWireHeaderSize), "cloud message").frame;
  return m;
}

// ---------------------------------------------------------------------------
// Payload builders

inline nlohmann::json path_payload(const SplinePath& path) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : path.samples) samples.push_back({s.x(), s.y()});
  nlohmann::json cps = nlohmann::json::array();
  for (const auto& c : path.control_points) cps.push_back({c.x(), c.y()});
  return {{"samples", samples}, {"control_points", cps}, {"length", path.length()}, {"warnings", path.warnings}};
}

/// 2-D footprint (xy polygon of the object's bottom bounding rectangle) for
/// every bounded object; unbounded planes are listed without one.
inline nlohmann::json scene_summary_payload(const Scene& scene) {
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& o : scene.objects()) {
    nlohmann::json jo = {{"id", o.id}, {"kind", to_string(o.geometry.kind)}, {"mover", o.motion.has_value()}};
    if (!o.geometry.unbounded()) {
      Aabb box;
      for (std::size_t p = 0; p < o.geometry.piece_count(); ++p)
        if (auto b = local_bounds(o.geometry, p)) box.extend(*b);
      // movers: footprint in the object frame, placed by the poses in `state`
      const Pose pose = o.motion ? Pose{} : o.geometry.local_pose;
      nlohmann::json poly = nlohmann::json::array();
      for (const auto& c : {Vec3(box.lo.x(), box.lo.y(), box.lo.z()), Vec3(box.hi.x(), box.lo.y(), box.lo.z()),
                            Vec3(box.hi.x(), box.hi.y(), box.lo.z()), Vec3(box.lo.x(), box.hi.y(), box.lo.z())}) {
        const Vec3 w = pose.transform_point(c);
        poly.push_back({w.x(), w.y()});
      }
      jo[o.motion ? "footprint_local" : "footprint"] = poly;
      const Vec3 top = pose.transform_point(box.hi);
      jo["height"] = std::max(top.z(), pose.transform_point(box.lo).z());
    }
    objs.push_back(jo);
  }
  return {{"name", scene.name()}, {"objects", objs}};
}

struct SessionStatus {
  bool running = false;
  bool recording = false;
  std::uint64_t ack_seq = 0;  // highest controller command seq applied
};

inline nlohmann::json state_payload(const Simulation& sim, const SessionStatus& st) {
  const RobotState& s = sim.current_state();
  const auto& c = sim.last_command();
  nlohmann::json tracker = {{"active", false}};
  if (const auto* tr = sim.tracker()) {
    tracker = {{"active", sim.config().control.mode == ControlMode::track},
               {"finished", tr->finished()},
               {"target_index", tr->state().target_index},
               {"samples", tr->path().samples.size()}};
  }
  nlohmann::json movers = nlohmann::json::array();
  if (!sim.scene()->movers().empty()) {
    const SceneSnapshot snap(sim.scene(), sim.sim_time());
    for (const auto idx : sim.scene()->movers()) {
      const Pose p = snap.object_pose(idx);
      movers.push_back({{"id", sim.scene()->objects()[idx].id}, {"x", p.position.x()}, {"y", p.position.y()},
                        {"yaw", p.yaw()}});
    }
  }
  return {{"pose", {{"x", s.x}, {"y", s.y}, {"z", sim.config().base_height}, {"yaw", s.theta}}},
          {"twist", {{"v", sim.teleop_twist().v}, {"w", sim.teleop_twist().w}}},
          {"executed", {{"v", c.v}, {"w", c.w}}},
          {"mode", to_string(sim.config().control.mode)},
          {"tracker", tracker},
          {"movers", movers},
          {"frames", sim.frame_count()},
          {"running", st.running},
          {"recording", st.recording},
          {"ack_seq", st.ack_seq}};
}

inline Envelope error_message(const std::string& code, const std::string& message) {
  return {"error", 0, 0.0, {{"code", code}, {"message", message}}};
}

}  // namespace lidarsim
