#pragma once

#include <functional>
#include <optional>
#include <string>

#include "fdif/denoiser.hpp"

namespace fdif {

struct TrainConfig {
  std::vector<int> n_list = {8, 16};
  int batch_size = 16;
  int64_t total_steps = 50000;
  double learning_rate = 1e-3;
  int warmup_steps = 1000;
  int t_train = 1000;  // nominal schedule steps pairing (alpha_t, alpha_bar_prev)
  int64_t dataset_size = 1000000;
  uint64_t seed = 1;
  DistributionKind distribution_kind = DistributionKind::relaxed;
  int64_t val_size = 4096;  // held-out pairs per length
  int64_t val_every = 500;
  uint64_t val_seed = 0x76616cULL;
  int threads = 0;  // 0 = hardware concurrency

  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  // Digest over every field that affects the trained result (threads and
  // validation cadence excluded by design).
  std::string digest() const;
  void validate() const;
};

// AdaBelief moments; shapes mirror the parameter list order.
struct OptimizerState {
  std::vector<std::vector<double>> m;  // first moment
  std::vector<std::vector<double>> s;  // second moment of (g - m)
  int64_t step = 0;

  static OptimizerState for_params(const std::vector<Parameter*>& params);
};

struct AdaBeliefConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-16;
};

// One AdaBelief update for a single parameter. `step` is 1-based and must
// already account for this update (bias correction uses it).
void adabelief_update(std::vector<double>& value, const std::vector<double>& grad,
                      std::vector<double>& m, std::vector<double>& s, const AdaBeliefConfig& cfg,
                      int64_t step);

// One training batch for one length.
struct Batch {
  int n = 0;
  std::vector<FactorPair> pairs;
  std::vector<ConditionSeq> conds;
  std::vector<ProbSeq> x0;
  std::vector<ProbSeq> x_t;
  std::vector<NoiseLevel> levels;
};

// Draws `batch_size` examples for length n at training step `step` from the
// seeded dataset stream (cycled over cfg.dataset_size entries), with
// alpha_bar_t ~ U(0,1) per example and x_t from q_sample.
Batch make_batch(int n, int batch_size, const TrainConfig& cfg, int64_t step);

struct StepResult {
  std::vector<double> loss_per_length;  // parallel to cfg.n_list
  double total_loss = 0.0;
};

class Trainer {
 public:
  Trainer(ModelConfig model_cfg, TrainConfig train_cfg);

  // Gradients of the summed per-length mean losses, one optimizer update.
  StepResult train_step();

  // Same, on caller-supplied batches (one per configured length). Exactly
  // one optimizer update regardless of batch count.
  StepResult train_step_on(const std::vector<Batch>& batches);

  // Mean Eq.-6 loss over the held-out validation pairs for one length.
  double validation_loss(int n);

  DenoiserParams& params() { return params_; }
  const DenoiserParams& params() const { return params_; }
  OptimizerState& opt_state() { return opt_; }
  const ModelConfig& model_config() const { return model_cfg_; }
  const TrainConfig& train_config() const { return train_cfg_; }
  int64_t step() const { return opt_.step; }

  // Full run with periodic validation, CSV telemetry and checkpoints.
  // `log_path` appends rows `step,n,loss,val_loss,wallclock_s`. Returns the
  // final checkpoint path.
  std::string run(const std::string& out_dir, const std::string& log_path,
                  int64_t checkpoint_every = 10000,
                  const std::function<void(int64_t, const StepResult&)>& on_step = {});

 private:
  double example_loss_and_grads(const Batch& batch, size_t idx, GradSink* sink, int64_t step,
                                int length_index);

  ModelConfig model_cfg_;
  TrainConfig train_cfg_;
  DenoiserParams params_;
  OptimizerState opt_;
};

// ---- checkpoint i/o ----
// Layout (little-endian throughout):
//   magic "FDIF" | u32 version | u32 header_len | header JSON
//   then per array: u16 name_len | name | u8 rank | u32 dims[rank] | f64 data[]
// Header JSON: {"model_config": {...}, "train_config_digest": "...", "step": N}.
inline constexpr char kCheckpointMagic[4] = {'F', 'D', 'I', 'F'};
inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  ModelConfig model_config;
  std::string train_config_digest;
  int64_t step = 0;
};

void save_checkpoint(const std::string& path, const DenoiserParams& params,
                     const OptimizerState* opt, const CheckpointHeader& header);

struct Checkpoint {
  CheckpointHeader header;
  DenoiserParams params;
  std::optional<OptimizerState> opt;

  explicit Checkpoint(const ModelConfig& cfg) : params(cfg) {}
};

// Throws BadMagicError / VersionMismatchError / ShapeMismatchError /
// TruncatedFileError; never returns partially-filled state.
Checkpoint load_checkpoint(const std::string& path);

// Loads into an existing parameter set; throws ShapeMismatchError when the
// stored arrays do not match the destination shapes. `params` is untouched
// on any failure.
CheckpointHeader load_checkpoint_into(const std::string& path, DenoiserParams& params,
                                      OptimizerState* opt = nullptr);

}  // namespace fdif
