// Counter-based random number generation. Every draw is a pure function of
// (seed, stream_id, key_a, key_b), so Monte Carlo loops are reproducible for
// any thread count or evaluation order, and coupled experiments can replay
// the exact same noise under different parameters.
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>

namespace pcd {

namespace detail {
inline std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}
}  // namespace detail

// 64-bit avalanche over the four-word key (splitmix64 finalizer chain).
inline std::uint64_t counter_u64(std::uint64_t seed, std::uint64_t stream,
                                 std::uint64_t a, std::uint64_t b) {
  std::uint64_t h = detail::mix64(seed ^ 0x9e3779b97f4a7c15ULL);
  h = detail::mix64(h ^ (stream + 0xbf58476d1ce4e5b9ULL));
  h = detail::mix64(h ^ (a + 0x94d049bb133111ebULL));
  h = detail::mix64(h ^ (b + 0x2545f4914f6cdd1dULL));
  return detail::mix64(h);
}

// Uniform in (0, 1]; the +1 keeps log() finite in Box-Muller.
inline double counter_uniform(std::uint64_t seed, std::uint64_t stream,
                              std::uint64_t a, std::uint64_t b) {
  return static_cast<double>((counter_u64(seed, stream, a, b) >> 11) + 1) * 0x1.0p-53;
}

// Pair of independent standard normals keyed by the counter tuple.
inline std::pair<double, double> counter_gaussian_pair(std::uint64_t seed,
                                                       std::uint64_t stream,
                                                       std::uint64_t a,
                                                       std::uint64_t b) {
  const double u1 = counter_uniform(seed, stream, a, 2 * b);
  const double u2 = counter_uniform(seed, stream, a, 2 * b + 1);
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double ang = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(ang), r * std::sin(ang)};
}

}  // namespace pcd
