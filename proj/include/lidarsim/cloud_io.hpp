#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "lidarsim/error.hpp"
#include "lidarsim/lidar.hpp"

namespace lidarsim {

inline constexpr char kCloudMagic[4] = {'M', 'S', 'P', 'C'};
inline constexpr std::uint32_t kCloudVersion = 1;
inline constexpr std::size_t kCloudHeaderSize = 4 + 4 + 4 + 8;
inline constexpr std::size_t kCloudRecordSize = 5 * 4;

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <class U>
U get_le(const char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

inline void put_f32(std::string& out, double v) { put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
inline void put_f64(std::string& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }
inline double get_f32(const char* p) { return std::bit_cast<float>(get_le<std::uint32_t>(p)); }
inline double get_f64(const char* p) { return std::bit_cast<double>(get_le<std::uint64_t>(p)); }

}  // namespace detail

/// MSPC layout, little-endian:
///   "MSPC" | u32 version | u32 count | f64 t0 | count x (f32 x, y, z, intensity, dt)
inline std::string encode_cloud(const PointCloudFrame& frame) {
  std::string out;
  out.reserve(kCloudHeaderSize + kCloudRecordSize * frame.points.size());
  out.append(kCloudMagic, 4);
  detail::put_le<std::uint32_t>(out, kCloudVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(frame.points.size()));
  detail::put_f64(out, frame.t0);
  for (const auto& p : frame.points) {
    detail::put_f32(out, p.xyz.x());
    detail::put_f32(out, p.xyz.y());
    detail::put_f32(out, p.xyz.z());
    detail::put_f32(out, p.intensity);
    detail::put_f32(out, p.dt);
  }
  return out;
}

struct DecodedCloud {
  PointCloudFrame frame;
  std::uint32_t version = kCloudVersion;
};

/// `what` names the frame in error messages.
inline DecodedCloud decode_cloud(std::string_view bytes, const std::string& what) {
  if (bytes.size() < kCloudHeaderSize)
    throw ParseError(what + ": truncated cloud header (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), kCloudMagic, 4) != 0) throw ParseError(what + ": bad magic, not an MSPC cloud");
  DecodedCloud out;
  out.version = detail::get_le<std::uint32_t>(bytes.data() + 4);
  const auto count = detail::get_le<std::uint32_t>(bytes.data() + 8);
  out.frame.t0 = detail::get_f64(bytes.data() + 12);
  const std::size_t expected = kCloudHeaderSize + kCloudRecordSize * static_cast<std::size_t>(count);
  if (bytes.size() < expected)
    throw ParseError(what + ": truncated cloud file (expected " + std::to_string(expected) + " bytes for " +
                     std::to_string(count) + " points, got " + std::to_string(bytes.size()) + ")");
  if (bytes.size() > expected)
    throw ParseError(what + ": " + std::to_string(bytes.size() - expected) + " trailing bytes after " +
                     std::to_string(count) + " points");
  out.frame.points.resize(count);
  const char* p = bytes.data() + kCloudHeaderSize;
  for (auto& pt : out.frame.points) {
    pt.xyz = Vec3(detail::get_f32(p), detail::get_f32(p + 4), detail::get_f32(p + 8));
    pt.intensity = detail::get_f32(p + 12);
    pt.dt = detail::get_f32(p + 16);
    p += kCloudRecordSize;
  }
  return out;
}

}  // namespace lidarsim
