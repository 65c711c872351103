#pragma once

#include <optional>

#include "fdif/denoiser.hpp"

namespace fdif {

enum class SamplerMode { modified, standard };

const char* to_string(SamplerMode m);
SamplerMode sampler_mode_from_string(const std::string& s);

struct SamplerConfig {
  int T = 1024;
  double gamma = 0.9;
  SamplerMode mode = SamplerMode::modified;
  DistributionKind sample_kind = DistributionKind::relaxed;
  int replicas = 1;
  uint64_t seed = 0;
  bool keep_records = true;  // large sweeps switch this off and keep outcomes only

  void validate() const {
    FDIF_REQUIRE(T >= 1, ConfigError, "SamplerConfig: T >= 1");
    FDIF_REQUIRE(gamma >= 0.0 && gamma < 1.0, ConfigError, "SamplerConfig: gamma in [0,1)");
    FDIF_REQUIRE(replicas >= 1, ConfigError, "SamplerConfig: replicas >= 1");
  }
};

struct StepRecord {
  int step = 0;  // 1-based network-evaluation index
  int t = 0;     // diffusion time index, T down to 1
  UInt a, b, product;
  bool matched = false;
  int bit_dist = 0;  // bit_distance(product, ab)
};

struct SampleOutcome {
  bool solved = false;
  int solved_step = 0;  // meaningful when solved
  UInt a, b;            // exact factors when solved, final decode otherwise
};

struct SampleTrace {
  std::vector<StepRecord> records;  // ends at the solved step
  SampleOutcome outcome;
};

// Algorithm: start from uniform bit probabilities, at each step draw a
// sample to show the network, early-exit on an exact product match, and
// otherwise move toward the network's estimate with weight (1-gamma):
//   x_{t-1} = gamma*x_t + (1-gamma)*[abar_prev*x0_hat + (1-abar_prev)/K].
SampleTrace sample_modified(const Denoiser& den, const SamplerConfig& cfg, UInt ab, int n, Rng& rng);

// Reference reverse process kept for the sampling ablation: hard one-hot
// states, x_{t-1} drawn from the exact posterior of (x_t, x0_hat).
SampleTrace sample_standard(const Denoiser& den, const SamplerConfig& cfg, UInt ab, int n, Rng& rng);

// Dispatch on cfg.mode.
SampleTrace run_sampler(const Denoiser& den, const SamplerConfig& cfg, UInt ab, int n, Rng& rng);

struct ReplicatedSummary {
  int replicas = 0;
  int solved_count = 0;
  std::optional<int> min_solve_step;
  std::optional<int> median_solve_step;
  std::vector<int> solve_steps_sorted;

  double solved_fraction_at(int step_budget) const;
};

struct ReplicatedResult {
  std::vector<SampleTrace> traces;
  ReplicatedSummary summary;
};

// Independent chains on the same target (rng stream per chain index), run in
// parallel; first-hit statistics over the replicas.
ReplicatedResult factor_replicated(const Denoiser& den, const SamplerConfig& cfg, UInt ab, int n,
                                   int threads = 0);

// Smallest step s with |{traces solved at step <= s}| >= fraction * |traces|;
// nullopt when the fraction is never reached.
std::optional<int> steps_to_fraction(const std::vector<SampleTrace>& traces, double fraction);

}  // namespace fdif
