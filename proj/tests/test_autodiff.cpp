#include <doctest.h>

#include <cmath>

#include "fdif/autodiff.hpp"
#include "fdif/gradcheck.hpp"

using namespace fdif;

namespace {
std::vector<double> iota_vals(int n, int c) {
  std::vector<double> v(size_t(n) * c);
  for (size_t i = 0; i < v.size(); ++i) v[i] = double(i + 1);
  return v;
}
}  // namespace

TEST_CASE("forward_shuffle interleaves halves; reverse_shuffle inverts it") {
  // [a,b,c,d,e,f,g,h] -> [a,e,b,f,c,g,d,h], one channel.
  std::vector<double> vals = {1, 2, 3, 4, 5, 6, 7, 8};
  Tape t;
  Tape::Id x = t.input(8, 1, vals.data());
  Tape::Id f = t.forward_shuffle(x);
  const std::vector<double> want = {1, 5, 2, 6, 3, 7, 4, 8};
  CHECK(t.value(f) == want);

  Tape::Id back = t.reverse_shuffle(f);
  CHECK(t.value(back) == vals);

  Tape::Id r = t.reverse_shuffle(x);
  const std::vector<double> want_r = {1, 3, 5, 7, 2, 4, 6, 8};
  CHECK(t.value(r) == want_r);
  Tape::Id fr = t.forward_shuffle(r);
  CHECK(t.value(fr) == vals);

  // n=2 is the identity.
  std::vector<double> two = {4, 9};
  Tape t2;
  Tape::Id y = t2.input(2, 1, two.data());
  CHECK(t2.value(t2.forward_shuffle(y)) == two);

  Tape t3;
  Tape::Id odd = t3.input(3, 1, two.data() /*unused*/);
  CHECK_THROWS_AS(t3.forward_shuffle(odd), OddLengthError);
  CHECK_THROWS_AS(t3.reverse_shuffle(odd), OddLengthError);
}

TEST_CASE("shuffles are mutual inverses for all even n up to 1024") {
  for (int n = 2; n <= 1024; n += 2) {
    std::vector<double> vals(size_t(n));
    for (int i = 0; i < n; ++i) vals[size_t(i)] = i;
    Tape t;
    Tape::Id x = t.input(n, 1, vals.data());
    CHECK(t.value(t.reverse_shuffle(t.forward_shuffle(x))) == vals);
    CHECK(t.value(t.forward_shuffle(t.reverse_shuffle(x))) == vals);
  }
}

TEST_CASE("conv1d identity kernel and boundary behavior") {
  const int n = 6, c = 3;
  std::vector<double> vals = iota_vals(n, c);
  Parameter w("w", {c, c, 3}), b("b", {c});
  for (int ci = 0; ci < c; ++ci) w.conv_at(ci, ci, 1) = 1.0;  // center tap only
  Tape t;
  Tape::Id x = t.input(n, c, vals.data());
  Tape::Id y = t.conv1d(x, w, b);
  CHECK(t.value(y) == vals);

  // n=1: only the center tap can contribute.
  Parameter w2("w", {1, 1, 3}), b2("b", {1});
  w2.conv_at(0, 0, 0) = 5.0;
  w2.conv_at(0, 0, 1) = 2.0;
  w2.conv_at(0, 0, 2) = 7.0;
  std::vector<double> one = {3.0};
  Tape t2;
  Tape::Id x2 = t2.input(1, 1, one.data());
  CHECK(t2.value(t2.conv1d(x2, w2, b2))[0] == doctest::Approx(6.0));
}

TEST_CASE("conv1d forward matches a direct triple-loop evaluation") {
  Rng rng(41);
  const int n = 6, ci = 2, co = 2;
  for (int trial = 0; trial < 20; ++trial) {
    Parameter w("w", {ci, co, 3}), b("b", {co});
    for (double& v : w.value) v = rng.uniform(-1, 1);
    for (double& v : b.value) v = rng.uniform(-1, 1);
    std::vector<double> x(size_t(n) * ci);
    for (double& v : x) v = rng.uniform(-1, 1);

    Tape t;
    Tape::Id xid = t.input(n, ci, x.data());
    const std::vector<double>& got = t.value(t.conv1d(xid, w, b));

    for (int i = 0; i < n; ++i) {
      for (int o = 0; o < co; ++o) {
        double acc = b.value[size_t(o)];
        for (int d = -1; d <= 1; ++d) {
          if (i + d < 0 || i + d >= n) continue;
          for (int cc = 0; cc < ci; ++cc) {
            acc += x[size_t(i + d) * ci + cc] * w.conv_at(cc, o, d + 1);
          }
        }
        REQUIRE(got[size_t(i) * co + o] == doctest::Approx(acc).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("instance_norm standardizes each channel over the sequence") {
  Rng rng(43);
  const int n = 32, c = 4;
  std::vector<double> vals(size_t(n) * c);
  for (double& v : vals) v = rng.uniform(-3, 5);
  Tape t;
  Tape::Id x = t.input(n, c, vals.data());
  const std::vector<double>& y = t.value(t.instance_norm(x));
  for (int j = 0; j < c; ++j) {
    double mean = 0, var = 0;
    for (int i = 0; i < n; ++i) mean += y[size_t(i) * c + j];
    mean /= n;
    for (int i = 0; i < n; ++i) {
      double d = y[size_t(i) * c + j] - mean;
      var += d * d;
    }
    var /= n;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }

  // Constant channel flushes to zero via the eps clamp.
  std::vector<double> flat(size_t(n), 7.5);
  Tape t2;
  Tape::Id z = t2.input(n, 1, flat.data());
  for (double v : t2.value(t2.instance_norm(z))) CHECK(v == 0.0);
}

TEST_CASE("gelu and sigmoid fixed points; softmax symmetry and stability") {
  std::vector<double> zero = {0.0};
  Tape t;
  Tape::Id x = t.input(1, 1, zero.data());
  CHECK(t.value(t.gelu(x))[0] == 0.0);
  CHECK(t.value(t.sigmoid(x))[0] == 0.5);

  std::vector<double> pair = {0.0, 0.0};
  Tape t2;
  Tape::Id y = t2.input(1, 2, pair.data());
  const std::vector<double>& sm = t2.value(t2.softmax_rows(y));
  CHECK(sm[0] == doctest::Approx(0.5));
  CHECK(sm[1] == doctest::Approx(0.5));

  // Entries spread over 1e3 must stay finite and normalized.
  std::vector<double> wide = {-500.0, 0.0, 500.0, 499.0};
  Tape t3;
  Tape::Id z = t3.input(2, 2, wide.data());
  const std::vector<double>& s3 = t3.value(t3.softmax_rows(z));
  for (double v : s3) CHECK(std::isfinite(v));
  CHECK(s3[0] + s3[1] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(s3[2] + s3[3] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("no op produces non-finite values for inputs within |x| <= 1e3") {
  Rng rng(47);
  const int n = 8, c = 4;
  std::vector<double> vals(size_t(n) * c);
  for (double& v : vals) v = rng.uniform(-1000.0, 1000.0);
  Parameter w("w", {c, c, 3}), b("b", {c}), lw("lw", {c, c}), lb("lb", {c});
  for (double& v : w.value) v = rng.uniform(-2, 2);
  for (double& v : lw.value) v = rng.uniform(-2, 2);
  Tape t;
  Tape::Id x = t.input(n, c, vals.data());
  for (Tape::Id id : {t.gelu(x), t.sigmoid(x), t.softmax_rows(x), t.instance_norm(x),
                      t.forward_shuffle(x), t.reverse_shuffle(x), t.conv1d(x, w, b),
                      t.linear(x, lw, lb), t.add(x, x), t.mul(x, x)}) {
    for (double v : t.value(id)) REQUIRE(std::isfinite(v));
  }
}

TEST_CASE("dropout contract") {
  Rng rng(53);
  const int n = 16, c = 8;
  std::vector<double> vals(size_t(n) * c);
  for (double& v : vals) v = rng.uniform(0.5, 2.0);

  Tape t;
  Tape::Id x = t.input(n, c, vals.data());
  CHECK(t.value(t.dropout(x, 0.0, true, 7)) == vals);    // rate 0 is identity
  CHECK(t.value(t.dropout(x, 0.9, false, 7)) == vals);   // infer mode is identity

  // Inverted-dropout expectation: the mean over many masks recovers x.
  const int masks = 10000;
  std::vector<double> acc(vals.size(), 0.0);
  for (int m = 0; m < masks; ++m) {
    Tape tm;
    Tape::Id xm = tm.input(n, c, vals.data());
    const std::vector<double>& y = tm.value(tm.dropout(xm, 0.3, true, 1000 + m));
    for (size_t i = 0; i < y.size(); ++i) acc[i] += y[i] / masks;
  }
  for (size_t i = 0; i < vals.size(); ++i) {
    const double p = 0.7;
    const double sigma = vals[i] * std::sqrt((1 - p) / (p * masks));
    CHECK(std::abs(acc[i] - vals[i]) < 4 * sigma + 1e-6);
  }
}

TEST_CASE("backward: all-ones gradient for sum, and 2x on repeated passes") {
  std::vector<double> vals = {1.0, -2.0, 3.0, 0.5};
  Parameter w("w", {2, 2}), b("b", {2});
  w.value = {0.5, -1.0, 2.0, 0.25};
  Tape t;
  Tape::Id x = t.input(2, 2, vals.data());
  Tape::Id loss = t.sum(t.linear(x, w, b));
  t.backward(loss);
  std::vector<double> g1 = w.grad;
  std::vector<double> gx1 = t.grad(x);
  t.backward(loss);
  for (size_t i = 0; i < g1.size(); ++i) CHECK(w.grad[i] == doctest::Approx(2 * g1[i]));

  Tape t2;
  Tape::Id y = t2.input(2, 2, vals.data());
  Tape::Id loss2 = t2.sum(y);
  t2.backward(loss2);
  for (double g : t2.grad(y)) CHECK(g == 1.0);
  (void)gx1;
}

TEST_CASE("gradient sink redirection keeps Parameter::grad untouched") {
  std::vector<double> vals = {1.0, 2.0, 3.0, 4.0};
  Parameter w("w", {2, 2}), b("b", {2});
  w.value = {1.0, 0.0, 0.0, 1.0};
  w.id = 0;
  b.id = 1;
  BufferGradSink sink;
  std::vector<Parameter*> ps = {&w, &b};
  sink.bind(ps);
  Tape t(&sink);
  Tape::Id x = t.input(2, 2, vals.data());
  t.backward(t.sum(t.linear(x, w, b)));
  for (double g : w.grad) CHECK(g == 0.0);
  double total = 0;
  for (double g : sink.buffers()[0]) total += std::abs(g);
  CHECK(total > 0.0);
}

TEST_CASE("randomized finite-difference suite passes for every op") {
  GradCheckConfig cfg;
  auto results = run_gradcheck_suite(cfg);
  for (const auto& r : results) {
    INFO(r.name, " rel=", r.max_rel_err, " abs=", r.max_abs_err);
    CHECK(r.pass);
  }
  CHECK(all_passed(results));
}
