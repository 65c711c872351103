#pragma once

#include <memory>

#include "fdif/autodiff.hpp"

namespace fdif {

struct ModelConfig {
  int m = 96;              // feature maps
  int h = 384;             // hidden size, 4m unless overridden
  double dropout_rate = 0.1;
  int k = 2;

  static ModelConfig with_m(int m_) {
    ModelConfig c;
    c.m = m_;
    c.h = 4 * m_;
    return c;
  }
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// All learnable arrays of the network. Canonical order fixed by all();
// checkpoints, gradient sinks and the optimizer all key off it.
struct DenoiserParams {
  Parameter in_proj_w1, in_proj_b1;  // 5 -> m
  Parameter in_proj_w2, in_proj_b2;  // m -> m
  Parameter conv_w, conv_b;          // 3m -> h, kernel 3
  Parameter lin_w, lin_b;            // h -> m
  Parameter gate_s, gate_z;          // m each
  Parameter out_w, out_b;            // m -> k

  explicit DenoiserParams(const ModelConfig& cfg);

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  int64_t param_count() const;
  void zero_grads();
};

// Closed-form parameter count from the declared shapes: 41m^2 + 16m + 2 at
// h=4m, k=2, 5 input channels.
int64_t closed_form_param_count(const ModelConfig& cfg);

// Z = 0 (candidate branch off at start), sigma(S) = 0.95, weights
// variance-scaled uniform by fan-in, biases 0.
DenoiserParams init_params(const ModelConfig& cfg, Rng& rng);

// Number of recurrent CSU applications: max(n/2, 4*ceil(log2 n)).
int recurrence_depth(int n);

enum class RunMode { train, infer };

// One CSU application on the tape. mask_seed feeds the dropout draw in
// train mode and is ignored otherwise.
Tape::Id csu_step(Tape& tape, Tape::Id s_r, DenoiserParams& params, const ModelConfig& cfg,
                  RunMode mode, uint64_t mask_seed = 0);

// Full network: input projection, recurrence_depth(n) shared-parameter CSU
// steps, output projection to per-bit probabilities.
Tape::Id denoiser_forward(Tape& tape, const ProbSeq& x_in, double alpha_bar,
                          const ConditionSeq& cond, DenoiserParams& params, const ModelConfig& cfg,
                          RunMode mode, uint64_t mask_seed = 0);

// Denoising interface the samplers consume; lets tests swap the network for
// analytic oracles.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual ProbSeq predict(const ProbSeq& x_in, double alpha_bar, const ConditionSeq& cond) const = 0;
};

// The trained network behind the Denoiser interface (inference mode).
class ModelDenoiser final : public Denoiser {
 public:
  ModelDenoiser(const DenoiserParams& params, ModelConfig cfg) : params_(&params), cfg_(cfg) {}
  ProbSeq predict(const ProbSeq& x_in, double alpha_bar, const ConditionSeq& cond) const override;

 private:
  const DenoiserParams* params_;
  ModelConfig cfg_;
};

}  // namespace fdif
