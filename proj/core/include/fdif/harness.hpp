#pragma once

#include <iosfwd>
#include <memory>

#include "fdif/gradcheck.hpp"
#include "fdif/oracles.hpp"
#include "fdif/sampler.hpp"
#include "fdif/training.hpp"

namespace fdif {

enum class ExperimentKind {
  noise_curve,
  per_bit_curve,
  steps_to_solve,
  replicated,
  sweep,
  ablate_sampling,
  ablate_distribution,
};

const char* to_string(ExperimentKind k);
ExperimentKind experiment_kind_from_string(const std::string& s);

struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::noise_curve;
  std::vector<std::string> model_paths;  // sweep: series; ablate_distribution: [relaxed, categorical]
  std::vector<int> n_values = {16};
  int examples = 256;
  int T = 1024;                                      // step budget per chain
  std::vector<int64_t> step_budgets;                 // sweep cells; defaults to powers of two up to 2^14
  std::vector<double> fractions = {1.0 / 256, 0.25, 0.5};
  int repeats = 5;
  uint64_t seed = 0;
  std::string out_path;
  SamplerMode sampler_mode = SamplerMode::modified;
  DistributionKind sample_kind = DistributionKind::relaxed;
  double gamma = 0.9;
  int threads = 0;

  std::string to_json() const;
  static ExperimentSpec from_json(const std::string& text);
  static ExperimentSpec load(const std::string& path);
  std::string digest() const;
};

// Builds the denoiser evaluated against one test instance; experiments use
// this to swap the trained network for analytic oracles in tests.
using DenoiserFactory = std::function<std::unique_ptr<Denoiser>(const FactorPair&)>;

// Factory over a loaded checkpoint (shared across instances).
DenoiserFactory model_denoiser_factory(std::shared_ptr<Checkpoint> ck);

// FNV-1a over a file's bytes, as a short hex string.
std::string file_digest(const std::string& path);

// Drivers. Each writes one CSV to spec.out_path with a '#' reproducibility
// stanza (seed, config digest, checkpoint digest) before the column header.
// `factory` overrides the checkpoint-backed denoiser when provided.
void run_noise_curve(const ExperimentSpec& spec, const DenoiserFactory& factory = nullptr);
void run_per_bit_curve(const ExperimentSpec& spec, const DenoiserFactory& factory = nullptr);
void run_steps_to_solve(const ExperimentSpec& spec, const DenoiserFactory& factory = nullptr);
void run_replicated(const ExperimentSpec& spec, const DenoiserFactory& factory = nullptr);
void run_sweep(const ExperimentSpec& spec, const DenoiserFactory& factory = nullptr);
void run_ablations(const ExperimentSpec& spec, const DenoiserFactory& factory = nullptr);

// In-memory cores of the drivers (shared with the acceptance suite).
struct NoiseCurvePoint {
  double noise_level;
  double bit_accuracy;
  double rounding_baseline;
};
std::vector<NoiseCurvePoint> noise_curve_points(const DenoiserFactory& factory, int n,
                                                int examples, DistributionKind kind, uint64_t seed,
                                                int threads = 0);

struct PerBitPoint {
  double noise_level;
  int bit_index;
  double accuracy;
};
std::vector<PerBitPoint> per_bit_points(const DenoiserFactory& factory, int n, int examples,
                                        DistributionKind kind, uint64_t seed, int threads = 0);

// Solve-step outcomes for `examples` distinct instances (or one instance
// replicated `examples` times) under a step budget.
std::vector<SampleTrace> solve_batch(const DenoiserFactory& factory, const SamplerConfig& cfg,
                                     int n, int examples, bool replicated, uint64_t seed,
                                     int threads = 0);

// ---- CLI ----
// Subcommands: train, factor, eval, noise-curve, per-bit, steps, replicated,
// sweep, ablate, gen-testset, oracle, gradcheck.
// Exit codes: 0 success (Unsolved outcomes included), 1 runtime failure,
// 2 usage error.
int run_cli(int argc, const char* const* argv);

// ---- canonical desk-scale training runs used by the acceptance suite ----
ModelConfig acceptance_model_config();
TrainConfig acceptance_train_config(DistributionKind kind);
std::string acceptance_checkpoint_path(const std::string& cache_dir, DistributionKind kind);
// Trains (or resumes) the desk-scale run if its final checkpoint is not in
// the cache; returns the checkpoint path.
std::string ensure_acceptance_checkpoint(const std::string& cache_dir, DistributionKind kind,
                                         std::ostream& log);

}  // namespace fdif
