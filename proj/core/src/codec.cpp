#include "fdif/codec.hpp"

#include <cmath>

namespace fdif {

bool ProbSeq::row_stochastic(double tol) const {
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int c = 0; c < k; ++c) {
      double v = at(i, c);
      if (!(v >= 0.0 && v <= 1.0 + tol)) return false;
      s += v;
    }
    if (std::abs(s - 1.0) > tol) return false;
  }
  return true;
}

void assert_row_stochastic(const ProbSeq& x, double tol) {
  FDIF_REQUIRE(x.row_stochastic(tol), Error, "ProbSeq rows must be stochastic");
}

ProbSeq encode_pair(const FactorPair& pair) {
  FDIF_REQUIRE(pair.valid(), Error, "encode_pair: invalid factor pair");
  const int half = pair.n / 2;
  ProbSeq x(pair.n, 2);
  for (int i = 0; i < half; ++i) {
    x.at(i, pair.a.bit(i) ? 1 : 0) = 1.0;
    x.at(half + i, pair.b.bit(i) ? 1 : 0) = 1.0;
  }
  return x;
}

std::pair<UInt, UInt> decode_pair(const ProbSeq& x) {
  FDIF_REQUIRE(x.n % 2 == 0, OddLengthError, "decode_pair: n must be even");
  FDIF_REQUIRE(x.k == 2, ShapeError, "decode_pair: k must be 2");
  const int half = x.n / 2;
  UInt a = 0, b = 0;
  for (int i = 0; i < half; ++i) {
    if (x.argmax_row(i) == 1) a = a.with_bit(i);
    if (x.argmax_row(half + i) == 1) b = b.with_bit(i);
  }
  return {a, b};
}

ConditionSeq encode_product(UInt ab, int n) {
  FDIF_REQUIRE(ab.bit_length() <= n, OverflowError, "encode_product: ab >= 2^n");
  ConditionSeq c;
  c.n = n;
  c.bits.resize(size_t(n));
  for (int i = 0; i < n; ++i) c.bits[i] = ab.bit(i) ? 1 : 0;
  return c;
}

double rounding_baseline(const ProbSeq& x_t, const ProbSeq& x0) {
  FDIF_REQUIRE(x_t.n == x0.n && x_t.k == x0.k, ShapeError, "rounding_baseline: shape mismatch");
  int hits = 0;
  for (int i = 0; i < x_t.n; ++i) {
    if (x_t.argmax_row(i) == x0.argmax_row(i)) ++hits;
  }
  return double(hits) / double(x_t.n);
}

}  // namespace fdif
