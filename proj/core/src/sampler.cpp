#include "fdif/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "fdif/parallel.hpp"

namespace fdif {

const char* to_string(SamplerMode m) { return m == SamplerMode::modified ? "modified" : "standard"; }

SamplerMode sampler_mode_from_string(const std::string& s) {
  if (s == "modified") return SamplerMode::modified;
  if (s == "standard") return SamplerMode::standard;
  throw ConfigError("unknown sampler mode: " + s);
}

namespace {

struct StepEval {
  UInt a, b, product;
  bool matched;
  int bit_dist;
};

StepEval evaluate(const ProbSeq& x0_hat, UInt ab) {
  auto [a, b] = decode_pair(x0_hat);
  UInt prod = a * b;
  return {a, b, prod, prod == ab, bit_distance(prod, ab)};
}

void record(SampleTrace& trace, const SamplerConfig& cfg, int step, int t, const StepEval& ev) {
  if (!cfg.keep_records && !ev.matched) return;
  trace.records.push_back({step, t, ev.a, ev.b, ev.product, ev.matched, ev.bit_dist});
}

ProbSeq draw_for_network(const ProbSeq& x_t, DistributionKind kind, Rng& rng) {
  ProbSeq out(x_t.n, x_t.k);
  if (kind == DistributionKind::categorical) {
    for (int i = 0; i < x_t.n; ++i) out.at(i, categorical_draw(x_t.row(i), x_t.k, rng)) = 1.0;
  } else {
    for (int i = 0; i < x_t.n; ++i) relaxed_draw(x_t.row(i), x_t.k, 1.0, 1e-12, rng, out.row(i));
  }
  return out;
}

}  // namespace

SampleTrace sample_modified(const Denoiser& den, const SamplerConfig& cfg, UInt ab, int n,
                            Rng& rng) {
  FDIF_REQUIRE(ab.bit_length() <= n, OverflowError, "sample_modified: ab >= 2^n");
  FDIF_REQUIRE(ab.is_odd(), Error, "sample_modified: ab must be odd (odd factors)");
  const int K = 2;
  const ConditionSeq cond = encode_product(ab, n);
  ProbSeq x_t = ProbSeq::uniform(n, K);
  SampleTrace trace;
  for (int t = cfg.T; t >= 1; --t) {
    const double abar_prev = 1.0 - double(t - 1) / double(cfg.T);
    const int step = cfg.T - t + 1;
    ProbSeq x_sample = draw_for_network(x_t, cfg.sample_kind, rng);
    ProbSeq x0_hat = den.predict(x_sample, abar_prev, cond);
    StepEval ev = evaluate(x0_hat, ab);
    record(trace, cfg, step, t, ev);
    if (ev.matched) {
      trace.outcome = {true, step, ev.a, ev.b};
      return trace;
    }
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < K; ++c) {
        x_t.at(i, c) = cfg.gamma * x_t.at(i, c) +
                       (1.0 - cfg.gamma) * (abar_prev * x0_hat.at(i, c) + (1.0 - abar_prev) / K);
      }
    }
  }
  auto [a, b] = decode_pair(x_t);
  trace.outcome = {false, 0, a, b};
  return trace;
}

SampleTrace sample_standard(const Denoiser& den, const SamplerConfig& cfg, UInt ab, int n,
                            Rng& rng) {
  FDIF_REQUIRE(ab.bit_length() <= n, OverflowError, "sample_standard: ab >= 2^n");
  FDIF_REQUIRE(ab.is_odd(), Error, "sample_standard: ab must be odd (odd factors)");
  const int K = 2;
  const ConditionSeq cond = encode_product(ab, n);
  // Hard one-hot states throughout: x_T is a uniform categorical draw.
  ProbSeq x_t(n, K);
  for (int i = 0; i < n; ++i) x_t.at(i, rng.coin() ? 1 : 0) = 1.0;

  SampleTrace trace;
  ProbSeq x0_hat;
  for (int t = cfg.T; t >= 1; --t) {
    const double abar_prev = 1.0 - double(t - 1) / double(cfg.T);
    const double abar_t = 1.0 - double(t) / double(cfg.T);
    const int step = cfg.T - t + 1;
    x0_hat = den.predict(x_t, abar_prev, cond);
    StepEval ev = evaluate(x0_hat, ab);
    record(trace, cfg, step, t, ev);
    if (ev.matched) {
      trace.outcome = {true, step, ev.a, ev.b};
      return trace;
    }
    if (t > 1) {
      NoiseLevel lvl;
      lvl.alpha_bar_t = abar_t;
      lvl.alpha_bar_prev = abar_prev;
      lvl.alpha_t = abar_t / abar_prev;
      lvl.beta_t = 1.0 - lvl.alpha_t;
      ProbSeq post = theta_post(x_t, x0_hat, lvl, K);
      ProbSeq next(n, K);
      for (int i = 0; i < n; ++i) next.at(i, categorical_draw(post.row(i), K, rng)) = 1.0;
      x_t = std::move(next);
    }
  }
  // Final decode comes from the last estimate, not a terminal draw.
  auto [a, b] = decode_pair(x0_hat);
  trace.outcome = {false, 0, a, b};
  return trace;
}

SampleTrace run_sampler(const Denoiser& den, const SamplerConfig& cfg, UInt ab, int n, Rng& rng) {
  return cfg.mode == SamplerMode::modified ? sample_modified(den, cfg, ab, n, rng)
                                           : sample_standard(den, cfg, ab, n, rng);
}

double ReplicatedSummary::solved_fraction_at(int step_budget) const {
  if (replicas == 0) return 0.0;
  auto it = std::upper_bound(solve_steps_sorted.begin(), solve_steps_sorted.end(), step_budget);
  return double(it - solve_steps_sorted.begin()) / double(replicas);
}

ReplicatedResult factor_replicated(const Denoiser& den, const SamplerConfig& cfg, UInt ab, int n,
                                   int threads) {
  cfg.validate();
  ReplicatedResult out;
  out.traces.resize(size_t(cfg.replicas));
  parallel_for(effective_threads(threads), cfg.replicas, [&](int64_t chain) {
    Rng rng(cfg.seed, {0x636861696eULL, uint64_t(chain)});
    out.traces[size_t(chain)] = run_sampler(den, cfg, ab, n, rng);
  });
  ReplicatedSummary& s = out.summary;
  s.replicas = cfg.replicas;
  for (const SampleTrace& tr : out.traces) {
    if (tr.outcome.solved) s.solve_steps_sorted.push_back(tr.outcome.solved_step);
  }
  std::sort(s.solve_steps_sorted.begin(), s.solve_steps_sorted.end());
  s.solved_count = int(s.solve_steps_sorted.size());
  if (s.solved_count > 0) s.min_solve_step = s.solve_steps_sorted.front();
  if (auto med = steps_to_fraction(out.traces, 0.5)) s.median_solve_step = med;
  return out;
}

std::optional<int> steps_to_fraction(const std::vector<SampleTrace>& traces, double fraction) {
  FDIF_REQUIRE(fraction > 0.0 && fraction <= 1.0, Error, "steps_to_fraction: fraction in (0,1]");
  std::vector<int> steps;
  for (const SampleTrace& tr : traces) {
    if (tr.outcome.solved) steps.push_back(tr.outcome.solved_step);
  }
  std::sort(steps.begin(), steps.end());
  const double need = fraction * double(traces.size());
  for (size_t i = 0; i < steps.size(); ++i) {
    if (double(i + 1) >= need) return steps[i];
  }
  return std::nullopt;
}

}  // namespace fdif
