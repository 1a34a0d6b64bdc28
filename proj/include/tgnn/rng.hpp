#pragma once

#include <cmath>
#include <cstdint>

namespace tgnn {

// Counter-based randomness. Every consumer derives its stream from
// hash64(seed, tags...), so results never depend on thread scheduling
// or on how many draws other components made.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t hash64(std::uint64_t a) { return splitmix64(a); }

template <typename... Rest>
std::uint64_t hash64(std::uint64_t a, std::uint64_t b, Rest... rest) {
  return hash64(splitmix64(a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2))), rest...);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix64(seed ^ 0xa02bdbf7bb3c0a7ull)) {}

  std::uint64_t next_u64() {
    state_ = splitmix64(state_);
    return state_;
  }

  // Uniform in [0, 1).
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). n must be positive.
  std::int64_t next_below(std::int64_t n) {
    return static_cast<std::int64_t>(next_u64() % static_cast<std::uint64_t>(n));
  }

  // Uniform in [lo, hi).
  double next_range(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  double next_normal() {
    // Box-Muller; one value per call keeps the stream counter-stable.
    double u1 = next_unit();
    double u2 = next_unit();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::uint64_t state_;
};

}  // namespace tgnn
