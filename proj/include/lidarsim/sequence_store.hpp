#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lidarsim/cloud_io.hpp"
#include "lidarsim/config.hpp"
#include "lidarsim/engine.hpp"
#include "lidarsim/error.hpp"
#include "lidarsim/imu.hpp"
#include "lidarsim/pose.hpp"
#include "lidarsim/sha256.hpp"

namespace lidarsim {

inline constexpr int kBundleFormatVersion = 1;
inline constexpr const char* kToolName = "lidarsim";
inline constexpr const char* kToolVersion = "0.1.0";

namespace fs = std::filesystem;

namespace detail {

/// Writes via a sibling temp file and rename, so readers never see a
/// half-written file under the final name.
inline void write_file_atomic(const fs::path& path, std::string_view bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

inline std::string fmt9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9f", v);
  return buf;
}

}  // namespace detail

inline std::string cloud_file_name(std::int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06lld.bin", static_cast<long long>(index));
  return buf;
}

// ---------------------------------------------------------------------------
// Text stream encoders

/// TUM trajectory: `t x y z qx qy qz qw`, one pose per line.
inline std::string encode_tum(const std::vector<StampedPose>& traj) {
  std::string out;
  out.reserve(traj.size() * 96);
  for (const auto& s : traj) {
    const auto& p = s.pose.position;
    const auto& q = s.pose.orientation;
    out += detail::fmt9(s.t);
    for (double v : {p.x(), p.y(), p.z(), q.x(), q.y(), q.z(), q.w()}) {
      out += ' ';
      out += detail::fmt9(v);
    }
    out += '\n';
  }
  return out;
}

inline std::string encode_imu_csv(const std::vector<ImuSample>& imu) {
  std::string out = "t,wx,wy,wz,ax,ay,az\n";
  for (const auto& s : imu) {
    out += detail::fmt9(s.t);
    for (double v : {s.angular_velocity.x(), s.angular_velocity.y(), s.angular_velocity.z(), s.specific_force.x(),
                     s.specific_force.y(), s.specific_force.z()}) {
      out += ',';
      out += detail::fmt9(v);
    }
    out += '\n';
  }
  return out;
}

inline std::string encode_command_log(const std::vector<TimedCommand>& cmds) {
  std::ostringstream ss;
  write_command_log(ss, cmds);
  return ss.str();
}

inline std::string encode_tracking_csv(const std::vector<TrackingSample>& log) {
  std::string out = "t,target_index,cross_track\n";
  for (const auto& s : log) out += detail::fmt9(s.t) + "," + std::to_string(s.target_index) + "," + detail::fmt9(s.cross_track) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Text stream decoders (row numbers are 1-based file lines)

inline std::vector<StampedPose> parse_tum(std::istream& in, const std::string& source) {
  std::vector<StampedPose> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    double v[8];
    std::string extra;
    for (double& x : v)
      if (!(ls >> x)) throw ParseError(source + ": row " + std::to_string(row) + ": expected 8 numbers 't x y z qx qy qz qw'");
    if (ls >> extra) throw ParseError(source + ": row " + std::to_string(row) + ": trailing data '" + extra + "'");
    StampedPose s;
    s.t = v[0];
    s.pose.position = Vec3(v[1], v[2], v[3]);
    Quat q(v[7], v[4], v[5], v[6]);
    const double n = q.norm();
    if (!(n > 0.5 && n < 1.5)) throw ParseError(source + ": row " + std::to_string(row) + ": quaternion is not unit length");
    s.pose.orientation = q.normalized();
    out.push_back(s);
  }
  return out;
}

inline std::vector<StampedPose> load_tum(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trajectory " + path.string());
  return parse_tum(in, path.string());
}

inline std::vector<ImuSample> parse_imu_csv(std::istream& in, const std::string& source) {
  std::vector<ImuSample> out;
  std::string line;
  std::size_t row = 0;
  if (!std::getline(in, line)) return out;
  ++row;
  if (line.rfind("t,wx,wy,wz,ax,ay,az", 0) != 0) throw ParseError(source + ": row 1: bad header '" + line + "'");
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    double v[7];
    std::istringstream ls(line);
    for (int i = 0; i < 7; ++i) {
      std::string cell;
      if (!std::getline(ls, cell, ',')) throw ParseError(source + ": row " + std::to_string(row) + ": expected 7 columns");
      try {
        std::size_t used = 0;
        v[i] = std::stod(cell, &used);
        if (cell.find_first_not_of(" \r", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ParseError(source + ": row " + std::to_string(row) + ": column " + std::to_string(i + 1) +
                         " is not a number ('" + cell + "')");
      }
    }
    std::string extra;
    if (std::getline(ls, extra, ',')) throw ParseError(source + ": row " + std::to_string(row) + ": expected 7 columns");
    out.push_back({v[0], Vec3(v[1], v[2], v[3]), Vec3(v[4], v[5], v[6])});
  }
  return out;
}

inline std::vector<TrackingSample> parse_tracking_csv(std::istream& in, const std::string& source) {
  std::vector<TrackingSample> out;
  std::string line;
  std::size_t row = 1;
  std::getline(in, line);
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    TrackingSample s;
    char c1 = 0, c2 = 0;
    std::istringstream ls(line);
    if (!(ls >> s.t >> c1 >> s.target_index >> c2 >> s.cross_track) || c1 != ',' || c2 != ',')
      throw ParseError(source + ": row " + std::to_string(row) + ": expected 't,target_index,cross_track'");
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Writer

struct BundleInfo {
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
};

/// Streams cloud frames to disk as they are produced; the other streams and
/// the manifest are written by finish().
class BundleWriter {
 public:
  explicit BundleWriter(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    if (fs::exists(dir_, ec)) {
      if (!fs::is_directory(dir_)) throw IoError(dir_.string() + " exists and is not a directory");
      if (!fs::is_empty(dir_)) throw IoError("refusing to write into non-empty directory " + dir_.string());
    }
    fs::create_directories(dir_ / "clouds", ec);
    if (ec) throw IoError("cannot create " + (dir_ / "clouds").string() + ": " + ec.message());
  }

  const fs::path& dir() const { return dir_; }

  void write_frame(std::int64_t index, const PointCloudFrame& frame) {
    if (index != frames_) throw PreconditionError("BundleWriter: frames must be written in order");
    const std::string bytes = encode_cloud(frame);
    detail::write_file_atomic(dir_ / "clouds" / cloud_file_name(index), bytes);
    cloud_hash_.update(bytes);
    ++frames_;
  }

  nlohmann::json finish(const BundleInfo& info, const std::vector<StampedPose>& ground_truth,
                        const std::vector<ImuSample>& imu, const std::vector<TimedCommand>& commands,
                        const std::vector<TrackingSample>& tracking) {
    using nlohmann::json;
    json streams = json::object();
    auto put = [&](const char* key, const char* file, const std::string& bytes) {
      detail::write_file_atomic(dir_ / file, bytes);
      streams[key] = {{"file", file}, {"sha256", sha256_hex(bytes)}};
    };
    put("ground_truth", "ground_truth.txt", encode_tum(ground_truth));
    put("imu", "imu.csv", encode_imu_csv(imu));
    if (!commands.empty()) put("commands", "commands.log", encode_command_log(commands));
    if (!tracking.empty()) put("tracking", "tracking.csv", encode_tracking_csv(tracking));
    streams["clouds"] = {{"dir", "clouds"}, {"sha256", cloud_hash_.hex()}};

    json manifest = {{"format_version", kBundleFormatVersion},
                     {"tool", kToolName},
                     {"tool_version", kToolVersion},
                     {"seed", info.seed},
                     {"config", info.config},
                     {"counts",
                      {{"ground_truth", ground_truth.size()},
                       {"imu", imu.size()},
                       {"frames", frames_},
                       {"commands", commands.size()},
                       {"tracking", tracking.size()}}},
                     {"streams", streams}};
    detail::write_file_atomic(dir_ / "manifest.json", manifest.dump(2) + "\n");
    return manifest;
  }

 private:
  fs::path dir_;
  std::int64_t frames_ = 0;
  Sha256 cloud_hash_;
};

inline std::vector<StampedPose> ground_truth_poses(const std::vector<GroundTruthSample>& gt) {
  std::vector<StampedPose> out;
  out.reserve(gt.size());
  for (const auto& s : gt) out.push_back({s.t, s.pose});
  return out;
}

/// All streams held in memory.
inline nlohmann::json write_bundle(const fs::path& dir, const SimulationStreams& streams, const BundleInfo& info) {
  BundleWriter w(dir);
  for (std::size_t i = 0; i < streams.frames.size(); ++i) w.write_frame(static_cast<std::int64_t>(i), streams.frames[i]);
  return w.finish(info, ground_truth_poses(streams.ground_truth), streams.imu, streams.commands, streams.tracking);
}

// ---------------------------------------------------------------------------
// Reader

struct BundleData {
  nlohmann::json manifest;
  std::vector<StampedPose> ground_truth;
  std::vector<ImuSample> imu;
  std::vector<PointCloudFrame> frames;
  std::vector<TimedCommand> commands;
  std::vector<TrackingSample> tracking;
  std::vector<std::string> warnings;
};

struct ReadOptions {
  bool verify_hashes = true;
  bool load_clouds = true;
};

inline nlohmann::json read_manifest(const fs::path& dir, std::vector<std::string>* warnings = nullptr) {
  const fs::path p = dir / "manifest.json";
  const auto j = detail::parse_json_text(detail::read_text_file(p, "manifest"), p.string());
  if (!j.is_object() || !j.contains("format_version") || !j.contains("counts") || !j.contains("streams"))
    throw ParseError(p.string() + ": not a sequence manifest");
  const int version = j["format_version"].get<int>();
  if (version != kBundleFormatVersion && warnings)
    warnings->push_back("manifest format_version " + std::to_string(version) + " differs from supported version " +
                        std::to_string(kBundleFormatVersion) + "; reading best-effort");
  return j;
}

inline PointCloudFrame read_cloud_file(const fs::path& path, const std::string& what,
                                       std::vector<std::string>* warnings = nullptr) {
  const std::string bytes = detail::read_text_file(path, "cloud file");
  auto d = decode_cloud(bytes, what);
  if (d.version != kCloudVersion && warnings)
    warnings->push_back(what + ": cloud format version " + std::to_string(d.version) + " (expected " +
                        std::to_string(kCloudVersion) + ")");
  return std::move(d.frame);
}

inline BundleData read_bundle(const fs::path& dir, const ReadOptions& opt = {}) {
  BundleData b;
  b.manifest = read_manifest(dir, &b.warnings);
  const auto& streams = b.manifest["streams"];
  const auto& counts = b.manifest["counts"];

  auto load_text = [&](const char* key) -> std::optional<std::string> {
    if (!streams.contains(key)) return std::nullopt;
    const fs::path p = dir / streams[key]["file"].get<std::string>();
    std::string text = detail::read_text_file(p, key);
    if (opt.verify_hashes && sha256_hex(text) != streams[key]["sha256"].get<std::string>())
      throw ValidationError(p.string() + ": content hash mismatch");
    return text;
  };
  auto check_count = [&](const char* key, std::size_t n) {
    if (counts.contains(key) && counts[key].get<std::size_t>() != n)
      throw ValidationError(std::string(key) + ": manifest lists " + std::to_string(counts[key].get<std::size_t>()) +
                            " entries, found " + std::to_string(n));
  };

  if (auto t = load_text("ground_truth")) {
    std::istringstream ss(*t);
    b.ground_truth = parse_tum(ss, (dir / "ground_truth.txt").string());
  }
  check_count("ground_truth", b.ground_truth.size());
  if (auto t = load_text("imu")) {
    std::istringstream ss(*t);
    b.imu = parse_imu_csv(ss, (dir / "imu.csv").string());
  }
  check_count("imu", b.imu.size());
  if (auto t = load_text("commands")) {
    std::istringstream ss(*t);
    b.commands = parse_command_log(ss, (dir / "commands.log").string());
  }
  check_count("commands", b.commands.size());
  if (auto t = load_text("tracking")) {
    std::istringstream ss(*t);
    b.tracking = parse_tracking_csv(ss, (dir / "tracking.csv").string());
  }
  check_count("tracking", b.tracking.size());

  const auto n_frames = counts["frames"].get<std::int64_t>();
  std::int64_t on_disk = 0;
  for (const auto& e : fs::directory_iterator(dir / "clouds"))
    if (e.path().extension() == ".bin") ++on_disk;
  if (on_disk != n_frames)
    throw ValidationError("clouds: manifest lists " + std::to_string(n_frames) + " frames, found " +
                          std::to_string(on_disk) + " files");
  if (opt.load_clouds || opt.verify_hashes) {
    Sha256 h;
    for (std::int64_t i = 0; i < n_frames; ++i) {
      const fs::path p = dir / "clouds" / cloud_file_name(i);
      const std::string what = "frame " + std::to_string(i) + " (" + p.string() + ")";
      if (!fs::exists(p)) throw ValidationError(what + ": missing");
      const std::string bytes = detail::read_text_file(p, "cloud file");
      h.update(bytes);
      if (opt.load_clouds) {
        auto d = decode_cloud(bytes, what);
        if (d.version != kCloudVersion)
          b.warnings.push_back(what + ": cloud format version " + std::to_string(d.version));
        b.frames.push_back(std::move(d.frame));
      }
    }
    if (opt.verify_hashes && h.hex() != streams["clouds"]["sha256"].get<std::string>())
      throw ValidationError("clouds: content hash mismatch");
  }
  return b;
}

/// Single digest identifying a bundle's full content (hash of its manifest,
/// which itself carries every stream hash).
inline std::string bundle_digest(const fs::path& dir) {
  return sha256_hex(detail::read_text_file(dir / "manifest.json", "manifest"));
}

}  // namespace lidarsim
