#pragma once

// Counter-based randomness: every Gaussian is a pure function of its key, so
// draws can be regenerated in any order, on any thread, bit-identically.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace avgsim {

constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Order-sensitive hash of a key tuple.
constexpr std::uint64_t hash_key(std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (std::uint64_t p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

/// Independent child seed, e.g. per path or per particle.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag, std::uint64_t index) noexcept {
  return hash_key({base, tag, index});
}

/// Uniform in (0, 1) from the top 53 bits.
inline double unit_open(std::uint64_t bits) noexcept {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

/// Standard normal via Box-Muller on two decorrelated words of the key hash.
inline double keyed_normal(std::uint64_t key) noexcept {
  const double u1 = unit_open(splitmix64(key ^ 0x243f6a8885a308d3ULL));
  const double u2 = unit_open(splitmix64(key ^ 0x13198a2e03707344ULL));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Sequential stream built on the keyed generator, for sampling loops.
class KeyedStream {
 public:
  explicit KeyedStream(std::uint64_t seed) noexcept : seed_(seed) {}
  double normal() noexcept { return keyed_normal(hash_key({seed_, counter_++})); }
  double uniform() noexcept { return unit_open(hash_key({seed_, counter_++, 0x55})); }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace avgsim
