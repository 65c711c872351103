#pragma once

#include <cstring>

#include "fdif/denoiser.hpp"

namespace fdif {

// Test double: always returns the exact one-hot encoding of the true pair.
// A sampler driven by it must solve at its first network call.
class PerfectOracleDenoiser final : public Denoiser {
 public:
  explicit PerfectOracleDenoiser(const FactorPair& truth) : x0_(encode_pair(truth)) {}
  ProbSeq predict(const ProbSeq&, double, const ConditionSeq&) const override { return x0_; }

 private:
  ProbSeq x0_;
};

// Test double: the true bits, each independently flipped with probability
// eps per call. The flip mask is a pure function of (seed, inputs), so runs
// are reproducible regardless of call order or thread count.
class EpsilonFlipDenoiser final : public Denoiser {
 public:
  EpsilonFlipDenoiser(const FactorPair& truth, double eps, uint64_t seed)
      : x0_(encode_pair(truth)), eps_(eps), seed_(seed) {}

  ProbSeq predict(const ProbSeq& x_in, double alpha_bar, const ConditionSeq&) const override {
    uint64_t h = seed_;
    for (double v : x_in.p) {
      uint64_t bits;
      static_assert(sizeof(bits) == sizeof(v));
      std::memcpy(&bits, &v, sizeof(bits));
      h ^= bits + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    }
    uint64_t ab_bits;
    std::memcpy(&ab_bits, &alpha_bar, sizeof(ab_bits));
    Rng rng(h, {ab_bits});
    ProbSeq out = x0_;
    for (int i = 0; i < out.n; ++i) {
      if (rng.uniform01() < eps_) std::swap(out.at(i, 0), out.at(i, 1));
    }
    return out;
  }

 private:
  ProbSeq x0_;
  double eps_;
  uint64_t seed_;
};

}  // namespace fdif
