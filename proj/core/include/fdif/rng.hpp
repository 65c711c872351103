#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace fdif {

// SplitMix64 step; used both as a standalone mixer and to derive stream seeds.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives a well-mixed child seed from a root seed and a key path, so that
// independent streams (per example, per step, per chain) never overlap.
inline uint64_t derive_seed(uint64_t root, std::initializer_list<uint64_t> path) {
  uint64_t s = root ^ 0xd6e8feb86659fd93ULL;
  for (uint64_t k : path) {
    s ^= k + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
    (void)splitmix64(s);
  }
  return splitmix64(s);
}

// Deterministic counter-based generator. All randomness in the library flows
// through this type; draws are identical across platforms and thread counts.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ^ 0x2545f4914f6cdd1dULL) {}
  Rng(uint64_t root, std::initializer_list<uint64_t> path) : Rng(derive_seed(root, path)) {}

  uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1).
  double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1) with both endpoints excluded, for log() safety.
  double uniform_open01() {
    double u = uniform01();
    constexpr double lo = 0x1.0p-53;
    if (u < lo) u = lo;
    if (u > 1.0 - lo) u = 1.0 - lo;
    return u;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, bound). Rejection-free multiply-shift would bias
  // for huge bounds; rejection keeps it exact.
  uint64_t below(uint64_t bound) {
    if (bound <= 1) return 0;
    uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

  bool coin() { return (next_u64() & 1) != 0; }

  // Standard Gumbel via -log(-log(u)), u in the open interval.
  double gumbel() {
    double u = uniform_open01();
    return -std::log(-std::log(u));
  }

 private:
  uint64_t state_;
};

}  // namespace fdif
