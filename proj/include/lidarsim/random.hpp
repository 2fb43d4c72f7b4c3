#pragma once

#include <cstdint>
#include <random>

namespace lidarsim {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Stream tags keep LIDAR and IMU draws independent for the same index.
enum class RngStream : std::uint64_t { lidar = 1, imu = 2 };

/// Independent generator for one (seed, stream, index) triple, so noise draws
/// never depend on scheduling or worker count.
inline std::mt19937_64 make_stream(std::uint64_t seed, RngStream stream, std::uint64_t index) {
  const std::uint64_t s = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(stream) ^
                                                       splitmix64(index)));
  return std::mt19937_64(s);
}

}  // namespace lidarsim
