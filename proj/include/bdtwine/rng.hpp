#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace bdtwine {

/// SplitMix64 finalizer (Steele, Lea & Flood).
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Stream `index` of root seed `seed`: mt19937_64 seeded with
/// mix64(seed ^ mix64(index)). Streams depend only on (seed, index), never
/// on which thread or in which order they are drawn.
inline std::mt19937_64 path_stream(std::uint64_t seed, std::uint64_t index) {
  return std::mt19937_64(mix64(seed ^ mix64(index)));
}

/// Uniform on [0, 1) from the top 53 bits of one 64-bit draw. Used instead
/// of std::uniform_real_distribution so draws are identical across
/// standard libraries.
template <typename Engine>
double uniform01(Engine& engine) {
  static_assert(Engine::max() == 0xffffffffffffffffULL && Engine::min() == 0,
                "uniform01 expects a full 64-bit engine");
  return static_cast<double>(engine() >> 11) * 0x1.0p-53;
}

template <typename Engine>
double standard_exponential(Engine& engine) {
  return -std::log1p(-uniform01(engine));
}

}  // namespace bdtwine
