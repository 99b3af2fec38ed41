#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace edgeprune {

/// Stateless counter-based generator: the value at (seed, stream, counter)
/// is a pure function, so draws can be produced in any order or in parallel
/// and remain reproducible.
class CounterRng {
 public:
  constexpr CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : key_(mix(seed ^ (stream * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL))) {}

  constexpr std::uint64_t bits(std::uint64_t counter) const noexcept {
    return mix(key_ + counter * 0x9E3779B97F4A7C15ULL);
  }

  /// Uniform in the open interval (0, 1).
  constexpr double uniform(std::uint64_t counter) const noexcept {
    return (static_cast<double>(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller on the counter pair (2i, 2i+1).
  double normal(std::uint64_t i) const noexcept {
    const double u1 = uniform(2 * (i >> 1));
    const double u2 = uniform(2 * (i >> 1) + 1);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    return (i & 1) ? r * std::sin(t) : r * std::cos(t);
  }

  /// Both normals of pair i at once.
  void normal_pair(std::uint64_t i, double& a, double& b) const noexcept {
    const double u1 = uniform(2 * i);
    const double u2 = uniform(2 * i + 1);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    a = r * std::cos(t);
    b = r * std::sin(t);
  }

  /// Derive an independent generator for a sub-stream.
  constexpr CounterRng split(std::uint64_t stream) const noexcept {
    return CounterRng(key_, stream);
  }

 private:
  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
};

}  // namespace edgeprune
