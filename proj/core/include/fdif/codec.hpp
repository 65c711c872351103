#pragma once

#include <utility>
#include <vector>

#include "fdif/common.hpp"
#include "fdif/numerics.hpp"

namespace fdif {

// Length-n sequence of per-position probability vectors. Production paths
// fix k=2 (bit categories); the diffusion math accepts general k so the
// closed-form kernels stay checkable as written.
struct ProbSeq {
  int n = 0;
  int k = 2;
  std::vector<double> p;  // row-major n x k

  ProbSeq() = default;
  ProbSeq(int n_, int k_ = 2) : n(n_), k(k_), p(size_t(n_) * k_, 0.0) {}

  double& at(int i, int c) { return p[size_t(i) * k + c]; }
  double at(int i, int c) const { return p[size_t(i) * k + c]; }
  const double* row(int i) const { return p.data() + size_t(i) * k; }
  double* row(int i) { return p.data() + size_t(i) * k; }

  // Uniform start state of the reverse process: every row 1/k.
  static ProbSeq uniform(int n_, int k_ = 2) {
    ProbSeq x(n_, k_);
    for (double& v : x.p) v = 1.0 / k_;
    return x;
  }

  int argmax_row(int i) const {  // ties break toward category 0
    int best = 0;
    for (int c = 1; c < k; ++c) {
      if (at(i, c) > at(i, best)) best = c;
    }
    return best;
  }

  bool row_stochastic(double tol = 1e-9) const;
};

void assert_row_stochastic(const ProbSeq& x, double tol = 1e-9);

// One-hot encoding of the n-bit product being factored; bit-exact by
// construction (bits stored, rows materialized on demand).
struct ConditionSeq {
  int n = 0;
  std::vector<uint8_t> bits;  // bits[i] = bit i of ab, LSB first

  double onehot(int i, int c) const { return (int(bits[i]) == c) ? 1.0 : 0.0; }
};

// x0 layout: positions [0, n/2) hold a's bits LSB-first, [n/2, n) hold b's.
ProbSeq encode_pair(const FactorPair& pair);

// Argmax per row (ties toward 0), halves reassembled LSB-first.
std::pair<UInt, UInt> decode_pair(const ProbSeq& x);

// Throws OverflowError when ab needs more than n bits.
ConditionSeq encode_product(UInt ab, int n);

// Fraction of positions whose argmax matches x0's; the trivial "round each
// bit" reference curve.
double rounding_baseline(const ProbSeq& x_t, const ProbSeq& x0);

}  // namespace fdif
