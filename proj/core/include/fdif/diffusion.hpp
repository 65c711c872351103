#pragma once

#include "fdif/codec.hpp"
#include "fdif/rng.hpp"

namespace fdif {

// Bundle of the schedule quantities one reverse step needs.
struct NoiseLevel {
  double alpha_bar_t = 1.0;
  double alpha_bar_prev = 1.0;
  double alpha_t = 1.0;
  double beta_t = 0.0;
};

// Linear cumulative schedule: alpha_bar(t) = 1 - t/T for t in {0..T}.
struct NoiseSchedule {
  int T = 1;

  explicit NoiseSchedule(int steps) : T(steps) { FDIF_REQUIRE(steps >= 1, Error, "schedule needs T >= 1"); }

  double alpha_bar(int t) const { return 1.0 - double(t) / double(T); }

  NoiseLevel level(int t) const {
    FDIF_REQUIRE(t >= 1 && t <= T, Error, "schedule step out of range");
    NoiseLevel l;
    l.alpha_bar_t = alpha_bar(t);
    l.alpha_bar_prev = alpha_bar(t - 1);
    l.alpha_t = l.alpha_bar_t / l.alpha_bar_prev;
    l.beta_t = 1.0 - l.alpha_t;
    return l;
  }
};

// Training draws alpha_bar_t ~ U(0,1); the (alpha_t, alpha_bar_prev) pair is
// reconstructed against a nominal T-step linear schedule.
NoiseLevel level_from_alpha_bar(double alpha_bar_t, int t_train);

enum class DistributionKind { categorical, relaxed };

struct DiffusionConfig {
  int k = 2;
  double temperature = 1.0;
  DistributionKind kind = DistributionKind::relaxed;
  double epsilon = 1e-12;  // clamp for logs and normalizations
};

const char* to_string(DistributionKind k);
DistributionKind distribution_kind_from_string(const std::string& s);

// Draws x_t given x0 at cumulative level alpha_bar: per position the
// parameter vector is alpha_bar*x0 + (1-alpha_bar)/k. Categorical returns
// exact one-hot rows; relaxed returns Gumbel-Softmax samples at the
// configured temperature (strictly inside the simplex).
ProbSeq q_sample(const ProbSeq& x0, double alpha_bar, const DiffusionConfig& cfg, Rng& rng);

// Exact posterior parameters of the previous step given x_t and x0:
// normalize([alpha_t*x_t + (1-alpha_t)/k] .* [abar_prev*x0 + (1-abar_prev)/k]).
ProbSeq theta_post(const ProbSeq& x_t, const ProbSeq& x0, const NoiseLevel& lvl, int k,
                   double epsilon = 1e-12);

// Mean over positions of KL(post(x_t,x0) || post(x_t,x0_hat)), the training
// objective. Plain-value version; the differentiable twin lives on the tape.
double kl_loss(const ProbSeq& x_t, const ProbSeq& x0, const ProbSeq& x0_hat, const NoiseLevel& lvl,
               int k, double epsilon = 1e-12);

// Single forward kernel draw: resample uniformly with probability beta_t.
// Exists so the cumulative kernel's composition property stays testable; the
// training path never calls it.
ProbSeq forward_kernel(const ProbSeq& x_prev, double beta_t, int k, Rng& rng);

// Shared helper: one categorical draw from a probability row.
int categorical_draw(const double* row, int k, Rng& rng);

// Gumbel-Softmax row sample written into `out`.
void relaxed_draw(const double* row, int k, double temperature, double epsilon, Rng& rng, double* out);

}  // namespace fdif
