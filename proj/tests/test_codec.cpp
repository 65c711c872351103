#include <doctest.h>

#include "fdif/codec.hpp"
#include "fdif/diffusion.hpp"

using namespace fdif;

TEST_CASE("encode_pair lays out LSB-first halves") {
  // 11 = 1011b -> [1,1,0,1] LSB-first; 13 = 1101b -> [1,0,1,1].
  FactorPair p{UInt(11), UInt(13), 8, UInt(143)};
  ProbSeq x = encode_pair(p);
  const int a_bits[4] = {1, 1, 0, 1};
  const int b_bits[4] = {1, 0, 1, 1};
  for (int i = 0; i < 4; ++i) {
    CHECK(x.at(i, a_bits[i]) == 1.0);
    CHECK(x.at(i, 1 - a_bits[i]) == 0.0);
    CHECK(x.at(4 + i, b_bits[i]) == 1.0);
  }
  CHECK(x.row_stochastic());

  FactorPair ones{UInt(1), UInt(1), 4, UInt(1)};
  ProbSeq y = encode_pair(ones);
  CHECK(y.at(0, 1) == 1.0);
  CHECK(y.at(1, 0) == 1.0);
  CHECK(y.at(2, 1) == 1.0);
  CHECK(y.at(3, 0) == 1.0);
}

TEST_CASE("decode_pair ties break toward zero") {
  ProbSeq x = ProbSeq::uniform(4);
  auto [a, b] = decode_pair(x);
  CHECK(a == UInt(0));
  CHECK(b == UInt(0));

  ProbSeq y(4, 2);
  for (int i = 0; i < 4; ++i) {
    y.at(i, 0) = 0.4;
    y.at(i, 1) = 0.6;
  }
  auto [a2, b2] = decode_pair(y);
  CHECK(a2 == UInt(3));  // 11b
  CHECK(b2 == UInt(3));
}

TEST_CASE("encode/decode round-trip, exhaustive over odd halves for n <= 16") {
  for (int n = 4; n <= 16; n += 2) {
    const int half = n / 2;
    for (uint64_t a = 1; a < (uint64_t(1) << half); a += 2) {
      for (uint64_t b = 1; b < (uint64_t(1) << half); b += 2) {
        FactorPair p{UInt(a), UInt(b), n, UInt(a) * UInt(b)};
        auto [da, db] = decode_pair(encode_pair(p));
        REQUIRE(da == p.a);
        REQUIRE(db == p.b);
      }
    }
  }
}

TEST_CASE("encode/decode round-trip on sampled larger pairs") {
  Rng rng(11);
  for (int i = 0; i < 2000; ++i) {
    FactorPair p = gen_training_pair(32, rng);
    auto [a, b] = decode_pair(encode_pair(p));
    REQUIRE(a == p.a);
    REQUIRE(b == p.b);
  }
}

TEST_CASE("encode_product places bit i at position i") {
  ConditionSeq c = encode_product(UInt(143), 8);
  const int bits[8] = {1, 1, 1, 1, 0, 0, 0, 1};  // 143 = 10001111b LSB-first
  for (int i = 0; i < 8; ++i) {
    CHECK(c.bits[i] == bits[i]);
    CHECK(c.onehot(i, bits[i]) == 1.0);
    CHECK(c.onehot(i, 1 - bits[i]) == 0.0);
  }

  ConditionSeq z = encode_product(UInt(0), 6);
  for (int i = 0; i < 6; ++i) CHECK(z.onehot(i, 0) == 1.0);

  CHECK_THROWS_AS(encode_product(UInt(1) << 8, 8), OverflowError);

  // Position alignment against independent big-integer bit extraction.
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    FactorPair p = gen_training_pair(24, rng);
    ConditionSeq cs = encode_product(p.ab, 24);
    for (int i = 0; i < 24; ++i) {
      REQUIRE(int(cs.bits[i]) == ((p.ab.raw() >> i) & 1));
    }
  }
}

TEST_CASE("rounding_baseline") {
  FactorPair p{UInt(11), UInt(13), 8, UInt(143)};
  ProbSeq x0 = encode_pair(p);
  CHECK(rounding_baseline(x0, x0) == 1.0);

  // Uniform rows argmax to 0 by the tie-break, so accuracy is the fraction
  // of zero bits in x0 (for 11,13: bits 11010111 -> three zeros of eight).
  ProbSeq u = ProbSeq::uniform(8);
  CHECK(rounding_baseline(u, x0) == doctest::Approx(3.0 / 8.0));
}

TEST_CASE("rounding baseline of noised samples matches the closed-form expectation") {
  // Oracle: P(argmax agrees) = abar + (1-abar)/2 per position.
  Rng rng(31);
  DiffusionConfig cfg;
  cfg.kind = DistributionKind::categorical;
  for (double abar : {0.2, 0.6, 0.9}) {
    const int trials = 20000;
    double acc = 0.0;
    FactorPair p = gen_training_pair(16, rng);
    ProbSeq x0 = encode_pair(p);
    for (int i = 0; i < trials; ++i) {
      ProbSeq x_t = q_sample(x0, abar, cfg, rng);
      acc += rounding_baseline(x_t, x0);
    }
    acc /= trials;
    const double expect = abar + (1.0 - abar) / 2.0;
    const double sigma = std::sqrt(expect * (1 - expect) / (trials * 16.0));
    CHECK(std::abs(acc - expect) < 3 * sigma + 1e-3);
  }
}
