#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "fdif/codec.hpp"
#include "fdif/diffusion.hpp"

namespace fdif {

// Named learnable array. Gradients accumulate into `grad` (or into a
// redirected sink during data-parallel training) until explicitly zeroed.
struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;
  int id = -1;  // position in the owning model's canonical parameter list

  Parameter() = default;
  Parameter(std::string n, std::vector<int> s);

  int64_t size() const { return int64_t(value.size()); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

  // Convolution weights use layout ((d*c_in)+ci)*c_out + co, shape {c_in, c_out, 3}.
  double& conv_at(int ci, int co, int d);
  // Linear weights are row-major {c_in, c_out}.
  double& lin_at(int ci, int co);
};

// Destination for parameter gradients during backward.
class GradSink {
 public:
  virtual ~GradSink() = default;
  virtual double* slot(Parameter& p) = 0;
};

// Default sink: accumulate straight into Parameter::grad.
class DirectGradSink final : public GradSink {
 public:
  double* slot(Parameter& p) override { return p.grad.data(); }
};

// Per-example sink keyed by parameter id; used by the data-parallel trainer
// so merge order (and hence the result) is independent of worker count.
class BufferGradSink final : public GradSink {
 public:
  void bind(const std::vector<Parameter*>& params);
  void zero();
  double* slot(Parameter& p) override;
  const std::vector<std::vector<double>>& buffers() const { return bufs_; }

 private:
  std::vector<std::vector<double>> bufs_;
};

// Dynamic record of executed sequence-tensor ops. Append-only, so reverse
// insertion order is a valid topological order for backward.
class Tape {
 public:
  using Id = int32_t;

  explicit Tape(GradSink* sink = nullptr) : sink_(sink) {}

  // ---- leaves ----
  Id input(int n, int c, const double* data);  // gradient-tracked leaf
  Id input(const ProbSeq& x) { return input(x.n, x.k, x.p.data()); }
  Id constant(int n, int c, const double* data);  // no gradient
  Id param_vector(Parameter& p);                  // 1 x c leaf from a vector parameter

  // ---- ops ----
  Id conv1d(Id x, Parameter& w, Parameter& b);  // kernel 3, zero padding, same length
  Id linear(Id x, Parameter& w, Parameter& b);
  Id forward_shuffle(Id x);
  Id reverse_shuffle(Id x);
  Id instance_norm(Id x, double eps_norm = 1e-5);
  Id gelu(Id x);
  Id sigmoid(Id x);
  Id softmax_rows(Id x);
  Id concat_channels(std::initializer_list<Id> xs);
  Id add(Id a, Id b);
  Id mul(Id a, Id b);
  Id scale_channels(Id x, Id v);  // v: 1 x c
  Id dropout(Id x, double rate, bool train_mode, uint64_t mask_seed);
  Id sum(Id x);                                          // 1x1
  Id weighted_sum(Id x, const std::vector<double>& w);   // 1x1, test scaffolding
  // Eq.-6 objective as a single differentiable node (1x1). x_t and x0 are
  // constants of the step; gradient flows to x0_hat only.
  Id kl_vs_posterior(Id x0_hat, const ProbSeq& x_t, const ProbSeq& x0, const NoiseLevel& lvl,
                     double epsilon = 1e-12);

  // ---- access ----
  int rows(Id id) const { return nodes_[id].n; }
  int cols(Id id) const { return nodes_[id].c; }
  const std::vector<double>& value(Id id) const { return nodes_[id].val; }
  const std::vector<double>& grad(Id id) const { return nodes_[id].grad; }
  double scalar(Id id) const;
  ProbSeq as_probseq(Id id) const;

  // Reverse pass from a scalar loss node. Node gradients reset on entry;
  // parameter gradients accumulate across calls (two passes -> 2x).
  void backward(Id loss, double seed = 1.0);

  void reset() { nodes_.clear(); }
  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    int n = 0, c = 0;
    std::vector<double> val;
    std::vector<double> grad;  // lazily sized by accumulation
    bool needs_grad = false;
    std::function<void(Tape&)> back;  // empty for leaves/constants
    std::vector<double> saved;        // op-specific stash
  };

  Id push(int n, int c, bool needs_grad);
  double* grad_slot(Id id);   // sizes the grad buffer on first touch
  double* param_slot(Parameter& p);
  void check_finite(Id id) const;

  std::deque<Node> nodes_;
  GradSink* sink_ = nullptr;
  DirectGradSink direct_;

  friend struct TapeOps;
};

}  // namespace fdif
