#include <doctest.h>

#include <cmath>

#include "fdif/denoiser.hpp"

using namespace fdif;

TEST_CASE("recurrence depth formula") {
  CHECK(recurrence_depth(8) == 12);
  CHECK(recurrence_depth(16) == 16);
  CHECK(recurrence_depth(24) == 20);
  CHECK(recurrence_depth(32) == 20);
  CHECK(recurrence_depth(40) == 24);
  CHECK(recurrence_depth(48) == 24);
  CHECK(recurrence_depth(56) == 28);
  CHECK(recurrence_depth(64) == 32);
}

TEST_CASE("init: gate vector openings") {
  Rng rng(1);
  ModelConfig cfg = ModelConfig::with_m(16);
  DenoiserParams p = init_params(cfg, rng);
  for (double s : p.gate_s.value) {
    const double sig = 1.0 / (1.0 + std::exp(-s));
    CHECK(std::abs(sig - 0.95) < 1e-6);
  }
  for (double z : p.gate_z.value) CHECK(z == 0.0);
  for (double b : p.conv_b.value) CHECK(b == 0.0);
}

TEST_CASE("parameter shapes and closed-form count") {
  ModelConfig cfg = ModelConfig::with_m(8);
  DenoiserParams p(cfg);
  CHECK(p.conv_w.shape == std::vector<int>{24, 32, 3});
  CHECK(p.lin_w.shape == std::vector<int>{32, 8});
  CHECK(p.in_proj_w1.shape == std::vector<int>{5, 8});
  CHECK(p.out_w.shape == std::vector<int>{8, 2});
  CHECK(p.param_count() == closed_form_param_count(cfg));
  // 41 m^2 + 16 m + 2
  CHECK(closed_form_param_count(cfg) == 41 * 64 + 16 * 8 + 2);

  // Paper-scale configuration: count matches the closed form and sits within
  // the reported 5.8M (binary millions) with rounding headroom.
  ModelConfig paper = ModelConfig::with_m(384);
  DenoiserParams pp(paper);
  CHECK(pp.param_count() == closed_form_param_count(paper));
  CHECK(pp.param_count() == 6051842);
  CHECK(double(pp.param_count()) / (1024.0 * 1024.0) < 5.9);
}

TEST_CASE("csu_step at init is a pure 0.95 decay of the state") {
  Rng rng(2);
  ModelConfig cfg = ModelConfig::with_m(8);
  DenoiserParams p = init_params(cfg, rng);
  const int n = 8;
  std::vector<double> state(size_t(n) * cfg.m);
  for (double& v : state) v = rng.uniform(-2, 2);
  Tape t;
  Tape::Id s0 = t.input(n, cfg.m, state.data());
  Tape::Id s1 = csu_step(t, s0, p, cfg, RunMode::infer);
  const std::vector<double>& out = t.value(s1);
  const double sig = 1.0 / (1.0 + std::exp(-std::log(0.95 / 0.05)));
  for (size_t i = 0; i < state.size(); ++i) {
    REQUIRE(out[i] == doctest::Approx(sig * state[i]).epsilon(1e-12));
  }
}

TEST_CASE("csu_step keeps shape across sizes") {
  Rng rng(3);
  ModelConfig cfg = ModelConfig::with_m(8);
  DenoiserParams p = init_params(cfg, rng);
  for (int n : {8, 16, 32}) {
    std::vector<double> state(size_t(n) * cfg.m);
    for (double& v : state) v = rng.uniform(-1, 1);
    Tape t;
    Tape::Id s1 = csu_step(t, t.input(n, cfg.m, state.data()), p, cfg, RunMode::infer);
    CHECK(t.rows(s1) == n);
    CHECK(t.cols(s1) == cfg.m);
  }
}

TEST_CASE("forward emits row-stochastic output and is deterministic in infer mode") {
  Rng rng(4);
  ModelConfig cfg = ModelConfig::with_m(8);
  DenoiserParams p = init_params(cfg, rng);
  for (double& z : p.gate_z.value) z = rng.uniform(-0.3, 0.3);

  FactorPair pair = gen_training_pair(16, rng);
  ProbSeq x0 = encode_pair(pair);
  ConditionSeq cond = encode_product(pair.ab, 16);

  Tape t1;
  Tape::Id o1 = denoiser_forward(t1, x0, 0.37, cond, p, cfg, RunMode::infer);
  ProbSeq y1 = t1.as_probseq(o1);
  CHECK(y1.n == 16);
  CHECK(y1.k == 2);
  CHECK(y1.row_stochastic(1e-9));

  Tape t2;
  ProbSeq y2 = t2.as_probseq(denoiser_forward(t2, x0, 0.37, cond, p, cfg, RunMode::infer));
  CHECK(y1.p == y2.p);  // bitwise identical
}

TEST_CASE("one parameter set serves multiple sequence lengths") {
  Rng rng(5);
  ModelConfig cfg = ModelConfig::with_m(8);
  DenoiserParams p = init_params(cfg, rng);
  for (int n : {16, 32}) {
    FactorPair pair = gen_training_pair(n, rng);
    ProbSeq x0 = encode_pair(pair);
    Tape t;
    ProbSeq y = t.as_probseq(
        denoiser_forward(t, x0, 0.5, encode_product(pair.ab, n), p, cfg, RunMode::infer));
    CHECK(y.n == n);
    CHECK(y.row_stochastic(1e-9));
  }
}

TEST_CASE("with Z=0 the candidate branch is dead: W' perturbations cannot move the output") {
  Rng rng(6);
  ModelConfig cfg = ModelConfig::with_m(8);
  DenoiserParams p = init_params(cfg, rng);  // Z = 0
  FactorPair pair = gen_training_pair(8, rng);
  ProbSeq x0 = encode_pair(pair);
  ConditionSeq cond = encode_product(pair.ab, 8);

  Tape t1;
  ProbSeq y1 = t1.as_probseq(denoiser_forward(t1, x0, 0.2, cond, p, cfg, RunMode::infer));
  for (double& v : p.lin_w.value) v += 0.731;  // arbitrary large perturbation
  Tape t2;
  ProbSeq y2 = t2.as_probseq(denoiser_forward(t2, x0, 0.2, cond, p, cfg, RunMode::infer));
  CHECK(y1.p == y2.p);
}

TEST_CASE("train mode dropout is seed-deterministic and differs across seeds") {
  Rng rng(7);
  ModelConfig cfg = ModelConfig::with_m(8);
  cfg.dropout_rate = 0.5;
  DenoiserParams p = init_params(cfg, rng);
  for (double& z : p.gate_z.value) z = rng.uniform(-0.5, 0.5);
  FactorPair pair = gen_training_pair(8, rng);
  ProbSeq x0 = encode_pair(pair);
  ConditionSeq cond = encode_product(pair.ab, 8);

  Tape a, b, c;
  ProbSeq ya = a.as_probseq(denoiser_forward(a, x0, 0.4, cond, p, cfg, RunMode::train, 101));
  ProbSeq yb = b.as_probseq(denoiser_forward(b, x0, 0.4, cond, p, cfg, RunMode::train, 101));
  ProbSeq yc = c.as_probseq(denoiser_forward(c, x0, 0.4, cond, p, cfg, RunMode::train, 202));
  CHECK(ya.p == yb.p);
  CHECK(ya.p != yc.p);
}

TEST_CASE("ModelDenoiser wraps forward behind the sampler-facing interface") {
  Rng rng(8);
  ModelConfig cfg = ModelConfig::with_m(8);
  DenoiserParams p = init_params(cfg, rng);
  ModelDenoiser den(p, cfg);
  FactorPair pair = gen_training_pair(8, rng);
  ProbSeq out = den.predict(ProbSeq::uniform(8), 0.3, encode_product(pair.ab, 8));
  CHECK(out.n == 8);
  CHECK(out.row_stochastic(1e-9));
}
