#include "fdif/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fdif {

const char* to_string(DistributionKind k) {
  return k == DistributionKind::categorical ? "categorical" : "relaxed";
}

DistributionKind distribution_kind_from_string(const std::string& s) {
  if (s == "categorical") return DistributionKind::categorical;
  if (s == "relaxed") return DistributionKind::relaxed;
  throw ConfigError("unknown distribution kind: " + s);
}

NoiseLevel level_from_alpha_bar(double alpha_bar_t, int t_train) {
  FDIF_REQUIRE(t_train >= 1, Error, "level_from_alpha_bar: t_train >= 1");
  NoiseLevel l;
  l.alpha_bar_t = alpha_bar_t;
  l.alpha_bar_prev = std::min(1.0, alpha_bar_t + 1.0 / double(t_train));
  l.alpha_t = l.alpha_bar_t / l.alpha_bar_prev;
  l.beta_t = 1.0 - l.alpha_t;
  return l;
}

int categorical_draw(const double* row, int k, Rng& rng) {
  double u = rng.uniform01();
  double acc = 0.0;
  for (int c = 0; c < k - 1; ++c) {
    acc += row[c];
    if (u < acc) return c;
  }
  return k - 1;
}

void relaxed_draw(const double* row, int k, double temperature, double epsilon, Rng& rng,
                  double* out) {
  double mx = -1e300;
  for (int c = 0; c < k; ++c) {
    double logit = (std::log(std::max(row[c], epsilon)) + rng.gumbel()) / temperature;
    out[c] = logit;
    mx = std::max(mx, logit);
  }
  double sum = 0.0;
  for (int c = 0; c < k; ++c) {
    out[c] = std::exp(out[c] - mx);
    sum += out[c];
  }
  for (int c = 0; c < k; ++c) out[c] /= sum;
}

ProbSeq q_sample(const ProbSeq& x0, double alpha_bar, const DiffusionConfig& cfg, Rng& rng) {
  FDIF_REQUIRE(x0.k == cfg.k, ShapeError, "q_sample: k mismatch");
  ProbSeq out(x0.n, x0.k);
  std::vector<double> param(static_cast<size_t>(x0.k), 0.0);
  for (int i = 0; i < x0.n; ++i) {
    for (int c = 0; c < x0.k; ++c) param[c] = alpha_bar * x0.at(i, c) + (1.0 - alpha_bar) / x0.k;
    if (cfg.kind == DistributionKind::categorical) {
      out.at(i, categorical_draw(param.data(), x0.k, rng)) = 1.0;
    } else {
      relaxed_draw(param.data(), x0.k, cfg.temperature, cfg.epsilon, rng, out.row(i));
    }
  }
  return out;
}

ProbSeq theta_post(const ProbSeq& x_t, const ProbSeq& x0, const NoiseLevel& lvl, int k,
                   double epsilon) {
  FDIF_REQUIRE(x_t.n == x0.n && x_t.k == k && x0.k == k, ShapeError, "theta_post: shape mismatch");
  ProbSeq out(x_t.n, k);
  for (int i = 0; i < x_t.n; ++i) {
    double sum = 0.0;
    for (int c = 0; c < k; ++c) {
      double u = lvl.alpha_t * x_t.at(i, c) + (1.0 - lvl.alpha_t) / k;
      double v = lvl.alpha_bar_prev * x0.at(i, c) + (1.0 - lvl.alpha_bar_prev) / k;
      out.at(i, c) = u * v;
      sum += u * v;
    }
    sum = std::max(sum, epsilon);
    for (int c = 0; c < k; ++c) out.at(i, c) /= sum;
  }
  return out;
}

double kl_loss(const ProbSeq& x_t, const ProbSeq& x0, const ProbSeq& x0_hat, const NoiseLevel& lvl,
               int k, double epsilon) {
  ProbSeq p = theta_post(x_t, x0, lvl, k, epsilon);
  ProbSeq q = theta_post(x_t, x0_hat, lvl, k, epsilon);
  double total = 0.0;
  for (int i = 0; i < p.n; ++i) {
    for (int c = 0; c < k; ++c) {
      double pc = p.at(i, c);
      if (pc <= 0.0) continue;  // 0*log0 := 0
      total += pc * (std::log(pc) - std::log(std::max(q.at(i, c), epsilon)));
    }
  }
  return total / double(p.n);
}

ProbSeq forward_kernel(const ProbSeq& x_prev, double beta_t, int k, Rng& rng) {
  FDIF_REQUIRE(x_prev.k == k, ShapeError, "forward_kernel: k mismatch");
  ProbSeq out(x_prev.n, k);
  std::vector<double> param(static_cast<size_t>(k), 0.0);
  for (int i = 0; i < x_prev.n; ++i) {
    for (int c = 0; c < k; ++c) param[c] = (1.0 - beta_t) * x_prev.at(i, c) + beta_t / k;
    out.at(i, categorical_draw(param.data(), k, rng)) = 1.0;
  }
  return out;
}

}  // namespace fdif
