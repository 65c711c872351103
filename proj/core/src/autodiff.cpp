#include "fdif/autodiff.hpp"

#include <Eigen/Core>
#include <cmath>

#include "fdif/rng.hpp"

namespace fdif {

namespace {
using EMat = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using CMat = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu_fwd(double x) { return 0.5 * x * std::erfc(-x * kInvSqrt2); }
double gelu_grad(double x) {
  double cdf = 0.5 * std::erfc(-x * kInvSqrt2);
  double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

double sigmoid_fwd(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Parameter::Parameter(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
  int64_t total = 1;
  for (int d : shape) total *= d;
  value.assign(size_t(total), 0.0);
  grad.assign(size_t(total), 0.0);
}

double& Parameter::conv_at(int ci, int co, int d) {
  const int c_in = shape[0], c_out = shape[1];
  return value[size_t((d * c_in + ci)) * c_out + co];
}

double& Parameter::lin_at(int ci, int co) { return value[size_t(ci) * shape[1] + co]; }

void BufferGradSink::bind(const std::vector<Parameter*>& params) {
  bufs_.resize(params.size());
  for (size_t i = 0; i < params.size(); ++i) bufs_[i].assign(size_t(params[i]->size()), 0.0);
}

void BufferGradSink::zero() {
  for (auto& b : bufs_) std::fill(b.begin(), b.end(), 0.0);
}

double* BufferGradSink::slot(Parameter& p) {
  FDIF_REQUIRE(p.id >= 0 && size_t(p.id) < bufs_.size(), Error,
               "BufferGradSink: parameter not bound");
  return bufs_[size_t(p.id)].data();
}

Tape::Id Tape::push(int n, int c, bool needs_grad) {
  Node node;
  node.n = n;
  node.c = c;
  node.val.assign(size_t(n) * c, 0.0);
  node.needs_grad = needs_grad;
  nodes_.push_back(std::move(node));
  return Id(nodes_.size() - 1);
}

double* Tape::grad_slot(Id id) {
  Node& nd = nodes_[id];
  if (nd.grad.empty()) nd.grad.assign(nd.val.size(), 0.0);
  return nd.grad.data();
}

double* Tape::param_slot(Parameter& p) {
  GradSink* s = sink_ ? sink_ : &direct_;
  return s->slot(p);
}

void Tape::check_finite(Id id) const {
#ifndef NDEBUG
  for (double v : nodes_[id].val) {
    FDIF_REQUIRE(std::isfinite(v), Error, "non-finite value produced by a tape op");
  }
#else
  (void)id;
#endif
}

double Tape::scalar(Id id) const {
  FDIF_REQUIRE(nodes_[id].n == 1 && nodes_[id].c == 1, ShapeError, "scalar: node is not 1x1");
  return nodes_[id].val[0];
}

ProbSeq Tape::as_probseq(Id id) const {
  const Node& nd = nodes_[id];
  ProbSeq x(nd.n, nd.c);
  x.p = nd.val;
  return x;
}

Tape::Id Tape::input(int n, int c, const double* data) {
  Id id = push(n, c, true);
  std::copy(data, data + size_t(n) * c, nodes_[id].val.begin());
  return id;
}

Tape::Id Tape::constant(int n, int c, const double* data) {
  Id id = push(n, c, false);
  std::copy(data, data + size_t(n) * c, nodes_[id].val.begin());
  return id;
}

Tape::Id Tape::param_vector(Parameter& p) {
  FDIF_REQUIRE(p.shape.size() == 1, ShapeError, "param_vector: parameter must be rank 1");
  Id id = push(1, int(p.size()), true);
  std::copy(p.value.begin(), p.value.end(), nodes_[id].val.begin());
  Parameter* pp = &p;
  nodes_[id].back = [id, pp](Tape& t) {
    Node& nd = t.nodes_[id];
    if (nd.grad.empty()) return;
    double* gs = t.param_slot(*pp);
    for (size_t i = 0; i < nd.grad.size(); ++i) gs[i] += nd.grad[i];
  };
  return id;
}

Tape::Id Tape::conv1d(Id x, Parameter& w, Parameter& b) {
  const Node& xn = nodes_[x];
  FDIF_REQUIRE(w.shape.size() == 3 && w.shape[2] == 3, ShapeError, "conv1d: weight must be {c_in,c_out,3}");
  const int n = xn.n, ci = xn.c, co = w.shape[1];
  FDIF_REQUIRE(w.shape[0] == ci, ShapeError, "conv1d: c_in mismatch");
  FDIF_REQUIRE(int(b.size()) == co, ShapeError, "conv1d: bias size mismatch");

  Id out = push(n, co, true);
  Node& on = nodes_[out];
  // im2col: row i = [x[i-1,:], x[i,:], x[i+1,:]], zero padded.
  on.saved.assign(size_t(n) * 3 * ci, 0.0);
  double* col = on.saved.data();
  const double* xd = nodes_[x].val.data();
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < 3; ++d) {
      int src = i + d - 1;
      if (src < 0 || src >= n) continue;
      std::copy(xd + size_t(src) * ci, xd + size_t(src + 1) * ci, col + (size_t(i) * 3 + d) * ci);
    }
  }
  {
    CMat X(col, n, 3 * ci);
    CMat W(w.value.data(), 3 * ci, co);
    EMat Y(on.val.data(), n, co);
    Y.noalias() = X * W;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < co; ++j) on.val[size_t(i) * co + j] += b.value[j];
    }
  }
  Parameter *wp = &w, *bp = &b;
  bool x_needs = nodes_[x].needs_grad;
  nodes_[out].back = [out, x, wp, bp, n, ci, co, x_needs](Tape& t) {
    Node& on2 = t.nodes_[out];
    if (on2.grad.empty()) return;
    CMat G(on2.grad.data(), n, co);
    CMat X(on2.saved.data(), n, 3 * ci);
    {
      double* gw = t.param_slot(*wp);
      EMat GW(gw, 3 * ci, co);
      GW.noalias() += X.transpose() * G;
      double* gb = t.param_slot(*bp);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < co; ++j) gb[j] += on2.grad[size_t(i) * co + j];
      }
    }
    if (x_needs) {
      CMat W(wp->value.data(), 3 * ci, co);
      std::vector<double> dcol(size_t(n) * 3 * ci);
      EMat DX(dcol.data(), n, 3 * ci);
      DX.noalias() = G * W.transpose();
      double* gx = t.grad_slot(x);
      for (int i = 0; i < n; ++i) {
        for (int d = 0; d < 3; ++d) {
          int dst = i + d - 1;
          if (dst < 0 || dst >= n) continue;
          const double* src = dcol.data() + (size_t(i) * 3 + d) * ci;
          double* dstp = gx + size_t(dst) * ci;
          for (int j = 0; j < ci; ++j) dstp[j] += src[j];
        }
      }
    }
  };
  check_finite(out);
  return out;
}

Tape::Id Tape::linear(Id x, Parameter& w, Parameter& b) {
  const Node& xn = nodes_[x];
  FDIF_REQUIRE(w.shape.size() == 2 && w.shape[0] == xn.c, ShapeError, "linear: weight shape mismatch");
  FDIF_REQUIRE(int(b.size()) == w.shape[1], ShapeError, "linear: bias size mismatch");
  const int n = xn.n, ci = xn.c, co = w.shape[1];
  Id out = push(n, co, true);
  {
    CMat X(nodes_[x].val.data(), n, ci);
    CMat W(w.value.data(), ci, co);
    EMat Y(nodes_[out].val.data(), n, co);
    Y.noalias() = X * W;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < co; ++j) nodes_[out].val[size_t(i) * co + j] += b.value[j];
    }
  }
  Parameter *wp = &w, *bp = &b;
  bool x_needs = nodes_[x].needs_grad;
  nodes_[out].back = [out, x, wp, bp, n, ci, co, x_needs](Tape& t) {
    Node& on2 = t.nodes_[out];
    if (on2.grad.empty()) return;
    CMat G(on2.grad.data(), n, co);
    CMat X(t.nodes_[x].val.data(), n, ci);
    {
      EMat GW(t.param_slot(*wp), ci, co);
      GW.noalias() += X.transpose() * G;
      double* gb = t.param_slot(*bp);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < co; ++j) gb[j] += on2.grad[size_t(i) * co + j];
      }
    }
    if (x_needs) {
      CMat W(wp->value.data(), ci, co);
      EMat GX(t.grad_slot(x), n, ci);
      GX.noalias() += G * W.transpose();
    }
  };
  check_finite(out);
  return out;
}

Tape::Id Tape::forward_shuffle(Id x) {
  const Node& xn = nodes_[x];
  FDIF_REQUIRE(xn.n % 2 == 0, OddLengthError, "forward_shuffle: n must be even");
  const int n = xn.n, c = xn.c, half = n / 2;
  Id out = push(n, c, xn.needs_grad);
  for (int i = 0; i < half; ++i) {
    std::copy(xn.val.begin() + size_t(i) * c, xn.val.begin() + size_t(i + 1) * c,
              nodes_[out].val.begin() + size_t(2 * i) * c);
    std::copy(xn.val.begin() + size_t(i + half) * c, xn.val.begin() + size_t(i + half + 1) * c,
              nodes_[out].val.begin() + size_t(2 * i + 1) * c);
  }
  if (xn.needs_grad) {
    nodes_[out].back = [out, x, n, c, half](Tape& t) {
      Node& on2 = t.nodes_[out];
      if (on2.grad.empty()) return;
      double* gx = t.grad_slot(x);
      for (int i = 0; i < half; ++i) {
        for (int j = 0; j < c; ++j) {
          gx[size_t(i) * c + j] += on2.grad[size_t(2 * i) * c + j];
          gx[size_t(i + half) * c + j] += on2.grad[size_t(2 * i + 1) * c + j];
        }
      }
    };
  }
  return out;
}

Tape::Id Tape::reverse_shuffle(Id x) {
  const Node& xn = nodes_[x];
  FDIF_REQUIRE(xn.n % 2 == 0, OddLengthError, "reverse_shuffle: n must be even");
  const int n = xn.n, c = xn.c, half = n / 2;
  Id out = push(n, c, xn.needs_grad);
  for (int i = 0; i < half; ++i) {
    std::copy(xn.val.begin() + size_t(2 * i) * c, xn.val.begin() + size_t(2 * i + 1) * c,
              nodes_[out].val.begin() + size_t(i) * c);
    std::copy(xn.val.begin() + size_t(2 * i + 1) * c, xn.val.begin() + size_t(2 * i + 2) * c,
              nodes_[out].val.begin() + size_t(i + half) * c);
  }
  if (xn.needs_grad) {
    nodes_[out].back = [out, x, n, c, half](Tape& t) {
      Node& on2 = t.nodes_[out];
      if (on2.grad.empty()) return;
      double* gx = t.grad_slot(x);
      for (int i = 0; i < half; ++i) {
        for (int j = 0; j < c; ++j) {
          gx[size_t(2 * i) * c + j] += on2.grad[size_t(i) * c + j];
          gx[size_t(2 * i + 1) * c + j] += on2.grad[size_t(i + half) * c + j];
        }
      }
    };
  }
  return out;
}

Tape::Id Tape::instance_norm(Id x, double eps_norm) {
  const Node& xn = nodes_[x];
  FDIF_REQUIRE(xn.n >= 2, ShapeError, "instance_norm: needs n >= 2");
  const int n = xn.n, c = xn.c;
  Id out = push(n, c, true);
  Node& on = nodes_[out];
  on.saved.assign(size_t(c), 0.0);  // per-channel 1/sqrt(var+eps)
  for (int j = 0; j < c; ++j) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += xn.val[size_t(i) * c + j];
    mean /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) {
      double d = xn.val[size_t(i) * c + j] - mean;
      var += d * d;
    }
    var /= n;
    double istd = 1.0 / std::sqrt(var + eps_norm);
    on.saved[j] = istd;
    for (int i = 0; i < n; ++i) {
      on.val[size_t(i) * c + j] = (nodes_[x].val[size_t(i) * c + j] - mean) * istd;
    }
  }
  bool x_needs = xn.needs_grad;
  if (x_needs) {
    nodes_[out].back = [out, x, n, c](Tape& t) {
      Node& on2 = t.nodes_[out];
      if (on2.grad.empty()) return;
      double* gx = t.grad_slot(x);
      for (int j = 0; j < c; ++j) {
        double istd = on2.saved[j];
        double gmean = 0.0, gymean = 0.0;
        for (int i = 0; i < n; ++i) {
          double g = on2.grad[size_t(i) * c + j];
          gmean += g;
          gymean += g * on2.val[size_t(i) * c + j];
        }
        gmean /= n;
        gymean /= n;
        for (int i = 0; i < n; ++i) {
          double g = on2.grad[size_t(i) * c + j];
          double y = on2.val[size_t(i) * c + j];
          gx[size_t(i) * c + j] += istd * (g - gmean - y * gymean);
        }
      }
    };
  }
  check_finite(out);
  return out;
}

Tape::Id Tape::gelu(Id x) {
  const Node& xn = nodes_[x];
  Id out = push(xn.n, xn.c, xn.needs_grad);
  for (size_t i = 0; i < xn.val.size(); ++i) nodes_[out].val[i] = gelu_fwd(nodes_[x].val[i]);
  if (xn.needs_grad) {
    nodes_[out].back = [out, x](Tape& t) {
      Node& on2 = t.nodes_[out];
      if (on2.grad.empty()) return;
      double* gx = t.grad_slot(x);
      const std::vector<double>& xv = t.nodes_[x].val;
      for (size_t i = 0; i < xv.size(); ++i) gx[i] += on2.grad[i] * gelu_grad(xv[i]);
    };
  }
  check_finite(out);
  return out;
}

Tape::Id Tape::sigmoid(Id x) {
  const Node& xn = nodes_[x];
  Id out = push(xn.n, xn.c, xn.needs_grad);
  for (size_t i = 0; i < xn.val.size(); ++i) nodes_[out].val[i] = sigmoid_fwd(nodes_[x].val[i]);
  if (xn.needs_grad) {
    nodes_[out].back = [out, x](Tape& t) {
      Node& on2 = t.nodes_[out];
      if (on2.grad.empty()) return;
      double* gx = t.grad_slot(x);
      for (size_t i = 0; i < on2.val.size(); ++i) {
        double y = on2.val[i];
        gx[i] += on2.grad[i] * y * (1.0 - y);
      }
    };
  }
  check_finite(out);
  return out;
}

Tape::Id Tape::softmax_rows(Id x) {
  const Node& xn = nodes_[x];
  const int n = xn.n, c = xn.c;
  Id out = push(n, c, xn.needs_grad);
  for (int i = 0; i < n; ++i) {
    const double* xi = nodes_[x].val.data() + size_t(i) * c;
    double* yi = nodes_[out].val.data() + size_t(i) * c;
    double mx = xi[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, xi[j]);
    double sum = 0.0;
    for (int j = 0; j < c; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      sum += yi[j];
    }
    for (int j = 0; j < c; ++j) yi[j] /= sum;
  }
  if (xn.needs_grad) {
    nodes_[out].back = [out, x, n, c](Tape& t) {
      Node& on2 = t.nodes_[out];
      if (on2.grad.empty()) return;
      double* gx = t.grad_slot(x);
      for (int i = 0; i < n; ++i) {
        const double* y = on2.val.data() + size_t(i) * c;
        const double* g = on2.grad.data() + size_t(i) * c;
        double dot = 0.0;
        for (int j = 0; j < c; ++j) dot += y[j] * g[j];
        for (int j = 0; j < c; ++j) gx[size_t(i) * c + j] += y[j] * (g[j] - dot);
      }
    };
  }
  check_finite(out);
  return out;
}

Tape::Id Tape::concat_channels(std::initializer_list<Id> xs) {
  FDIF_REQUIRE(xs.size() >= 1, ShapeError, "concat_channels: needs at least one input");
  std::vector<Id> ids(xs);
  const int n = nodes_[ids[0]].n;
  int ctot = 0;
  bool needs = false;
  for (Id id : ids) {
    FDIF_REQUIRE(nodes_[id].n == n, ShapeError, "concat_channels: length mismatch");
    ctot += nodes_[id].c;
    needs = needs || nodes_[id].needs_grad;
  }
  Id out = push(n, ctot, needs);
  int off = 0;
  for (Id id : ids) {
    const Node& src = nodes_[id];
    for (int i = 0; i < n; ++i) {
      std::copy(src.val.begin() + size_t(i) * src.c, src.val.begin() + size_t(i + 1) * src.c,
                nodes_[out].val.begin() + size_t(i) * ctot + off);
    }
    off += src.c;
  }
  if (needs) {
    nodes_[out].back = [out, ids, n, ctot](Tape& t) {
      Node& on2 = t.nodes_[out];
      if (on2.grad.empty()) return;
      int off2 = 0;
      for (Id id : ids) {
        Node& src = t.nodes_[id];
        if (src.needs_grad) {
          double* gx = t.grad_slot(id);
          for (int i = 0; i < n; ++i) {
            for (int j = 0; j < src.c; ++j) {
              gx[size_t(i) * src.c + j] += on2.grad[size_t(i) * ctot + off2 + j];
            }
          }
        }
        off2 += src.c;
      }
    };
  }
  return out;
}

Tape::Id Tape::add(Id a, Id b) {
  const Node &an = nodes_[a], &bn = nodes_[b];
  FDIF_REQUIRE(an.n == bn.n && an.c == bn.c, ShapeError, "add: shape mismatch");
  Id out = push(an.n, an.c, an.needs_grad || bn.needs_grad);
  for (size_t i = 0; i < an.val.size(); ++i) nodes_[out].val[i] = nodes_[a].val[i] + nodes_[b].val[i];
  nodes_[out].back = [out, a, b](Tape& t) {
    Node& on2 = t.nodes_[out];
    if (on2.grad.empty()) return;
    if (t.nodes_[a].needs_grad) {
      double* ga = t.grad_slot(a);
      for (size_t i = 0; i < on2.grad.size(); ++i) ga[i] += on2.grad[i];
    }
    if (t.nodes_[b].needs_grad) {
      double* gb = t.grad_slot(b);
      for (size_t i = 0; i < on2.grad.size(); ++i) gb[i] += on2.grad[i];
    }
  };
  check_finite(out);
  return out;
}

Tape::Id Tape::mul(Id a, Id b) {
  const Node &an = nodes_[a], &bn = nodes_[b];
  FDIF_REQUIRE(an.n == bn.n && an.c == bn.c, ShapeError, "mul: shape mismatch");
  Id out = push(an.n, an.c, an.needs_grad || bn.needs_grad);
  for (size_t i = 0; i < an.val.size(); ++i) nodes_[out].val[i] = nodes_[a].val[i] * nodes_[b].val[i];
  nodes_[out].back = [out, a, b](Tape& t) {
    Node& on2 = t.nodes_[out];
    if (on2.grad.empty()) return;
    if (t.nodes_[a].needs_grad) {
      double* ga = t.grad_slot(a);
      for (size_t i = 0; i < on2.grad.size(); ++i) ga[i] += on2.grad[i] * t.nodes_[b].val[i];
    }
    if (t.nodes_[b].needs_grad) {
      double* gb = t.grad_slot(b);
      for (size_t i = 0; i < on2.grad.size(); ++i) gb[i] += on2.grad[i] * t.nodes_[a].val[i];
    }
  };
  check_finite(out);
  return out;
}

Tape::Id Tape::scale_channels(Id x, Id v) {
  const Node &xn = nodes_[x], &vn = nodes_[v];
  FDIF_REQUIRE(vn.n == 1 && vn.c == xn.c, ShapeError, "scale_channels: v must be 1 x c");
  const int n = xn.n, c = xn.c;
  Id out = push(n, c, xn.needs_grad || vn.needs_grad);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < c; ++j) {
      nodes_[out].val[size_t(i) * c + j] = nodes_[x].val[size_t(i) * c + j] * nodes_[v].val[j];
    }
  }
  nodes_[out].back = [out, x, v, n, c](Tape& t) {
    Node& on2 = t.nodes_[out];
    if (on2.grad.empty()) return;
    if (t.nodes_[x].needs_grad) {
      double* gx = t.grad_slot(x);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < c; ++j) {
          gx[size_t(i) * c + j] += on2.grad[size_t(i) * c + j] * t.nodes_[v].val[j];
        }
      }
    }
    if (t.nodes_[v].needs_grad) {
      double* gv = t.grad_slot(v);
      for (int j = 0; j < c; ++j) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
          acc += on2.grad[size_t(i) * c + j] * t.nodes_[x].val[size_t(i) * c + j];
        }
        gv[j] += acc;
      }
    }
  };
  check_finite(out);
  return out;
}

Tape::Id Tape::dropout(Id x, double rate, bool train_mode, uint64_t mask_seed) {
  FDIF_REQUIRE(rate >= 0.0 && rate < 1.0, Error, "dropout: rate must be in [0,1)");
  const Node& xn = nodes_[x];
  if (!train_mode || rate == 0.0) {
    // Identity in inference mode; still a node so graphs stay uniform.
    Id out = push(xn.n, xn.c, xn.needs_grad);
    nodes_[out].val = nodes_[x].val;
    if (xn.needs_grad) {
      nodes_[out].back = [out, x](Tape& t) {
        Node& on2 = t.nodes_[out];
        if (on2.grad.empty()) return;
        double* gx = t.grad_slot(x);
        for (size_t i = 0; i < on2.grad.size(); ++i) gx[i] += on2.grad[i];
      };
    }
    return out;
  }
  Id out = push(xn.n, xn.c, xn.needs_grad);
  Node& on = nodes_[out];
  on.saved.assign(xn.val.size(), 0.0);  // kept-mask scale factors
  Rng rng(mask_seed);
  const double scale = 1.0 / (1.0 - rate);
  for (size_t i = 0; i < xn.val.size(); ++i) {
    double keep = (rng.uniform01() >= rate) ? scale : 0.0;
    on.saved[i] = keep;
    on.val[i] = nodes_[x].val[i] * keep;
  }
  if (xn.needs_grad) {
    nodes_[out].back = [out, x](Tape& t) {
      Node& on2 = t.nodes_[out];
      if (on2.grad.empty()) return;
      double* gx = t.grad_slot(x);
      for (size_t i = 0; i < on2.grad.size(); ++i) gx[i] += on2.grad[i] * on2.saved[i];
    };
  }
  return out;
}

Tape::Id Tape::sum(Id x) {
  const Node& xn = nodes_[x];
  Id out = push(1, 1, xn.needs_grad);
  double acc = 0.0;
  for (double v : xn.val) acc += v;
  nodes_[out].val[0] = acc;
  if (xn.needs_grad) {
    nodes_[out].back = [out, x](Tape& t) {
      Node& on2 = t.nodes_[out];
      if (on2.grad.empty()) return;
      double g = on2.grad[0];
      double* gx = t.grad_slot(x);
      for (size_t i = 0; i < t.nodes_[x].val.size(); ++i) gx[i] += g;
    };
  }
  return out;
}

Tape::Id Tape::weighted_sum(Id x, const std::vector<double>& w) {
  const Node& xn = nodes_[x];
  FDIF_REQUIRE(w.size() == xn.val.size(), ShapeError, "weighted_sum: weight size mismatch");
  Id out = push(1, 1, xn.needs_grad);
  double acc = 0.0;
  for (size_t i = 0; i < w.size(); ++i) acc += w[i] * xn.val[i];
  nodes_[out].val[0] = acc;
  if (xn.needs_grad) {
    std::vector<double> wc = w;
    nodes_[out].back = [out, x, wc](Tape& t) {
      Node& on2 = t.nodes_[out];
      if (on2.grad.empty()) return;
      double g = on2.grad[0];
      double* gx = t.grad_slot(x);
      for (size_t i = 0; i < wc.size(); ++i) gx[i] += g * wc[i];
    };
  }
  return out;
}

Tape::Id Tape::kl_vs_posterior(Id x0_hat, const ProbSeq& x_t, const ProbSeq& x0,
                               const NoiseLevel& lvl, double epsilon) {
  const Node& hn = nodes_[x0_hat];
  const int n = hn.n, k = hn.c;
  FDIF_REQUIRE(x_t.n == n && x_t.k == k && x0.n == n && x0.k == k, ShapeError,
               "kl_vs_posterior: shape mismatch");
  Id out = push(1, 1, hn.needs_grad);
  Node& on = nodes_[out];
  // saved layout per position: [u_0..u_{k-1}, p_0..p_{k-1}, q_0..q_{k-1}, W]
  on.saved.assign(size_t(n) * (3 * k + 1), 0.0);
  double total = 0.0;
  std::vector<double> ptilde(static_cast<size_t>(k), 0.0);
  for (int i = 0; i < n; ++i) {
    double* s = on.saved.data() + size_t(i) * (3 * k + 1);
    double psum = 0.0;
    for (int c = 0; c < k; ++c) {
      double u = lvl.alpha_t * x_t.at(i, c) + (1.0 - lvl.alpha_t) / k;
      double v0 = lvl.alpha_bar_prev * x0.at(i, c) + (1.0 - lvl.alpha_bar_prev) / k;
      s[c] = u;
      ptilde[c] = u * v0;
      psum += ptilde[c];
    }
    psum = std::max(psum, epsilon);
    double qsum = 0.0;
    for (int c = 0; c < k; ++c) {
      s[k + c] = ptilde[c] / psum;  // p
      double vh = lvl.alpha_bar_prev * hn.val[size_t(i) * k + c] + (1.0 - lvl.alpha_bar_prev) / k;
      qsum += s[c] * vh;
    }
    double W = std::max(qsum, epsilon);
    s[3 * k] = W;
    for (int c = 0; c < k; ++c) {
      double vh = lvl.alpha_bar_prev * hn.val[size_t(i) * k + c] + (1.0 - lvl.alpha_bar_prev) / k;
      double q = (s[c] * vh) / W;
      s[2 * k + c] = q;
      double p = s[k + c];
      if (p > 0.0) total += p * (std::log(p) - std::log(std::max(q, epsilon)));
    }
  }
  on.val[0] = total / n;
  if (hn.needs_grad) {
    double abar_prev = lvl.alpha_bar_prev;
    nodes_[out].back = [out, x0_hat, n, k, abar_prev, epsilon](Tape& t) {
      Node& on2 = t.nodes_[out];
      if (on2.grad.empty()) return;
      double g = on2.grad[0] / n;
      double* gx = t.grad_slot(x0_hat);
      for (int i = 0; i < n; ++i) {
        const double* s = on2.saved.data() + size_t(i) * (3 * k + 1);
        double W = s[3 * k];
        // d/dw_j of [sum_c p_c log(p_c) - p_c log(max(q_c,eps))], w_j = u_j * v_j:
        //   (P_unclamped - [q_j>eps] * p_j/q_j) / W; chain dw/dv = u, dv/dxhat = abar_prev.
        double p_unclamped = 0.0;
        for (int c = 0; c < k; ++c) {
          if (s[2 * k + c] > epsilon) p_unclamped += s[k + c];
        }
        for (int j = 0; j < k; ++j) {
          double q = s[2 * k + j];
          double term = p_unclamped;
          if (q > epsilon) term -= s[k + j] / q;
          gx[size_t(i) * k + j] += g * abar_prev * s[j] * term / W;
        }
      }
    };
  }
  check_finite(out);
  return out;
}

void Tape::backward(Id loss, double seed) {
  FDIF_REQUIRE(loss >= 0 && size_t(loss) < nodes_.size(), Error, "backward: bad node id");
  FDIF_REQUIRE(nodes_[loss].n == 1 && nodes_[loss].c == 1, ShapeError,
               "backward: loss must be scalar");
  for (Node& nd : nodes_) {
    if (!nd.grad.empty()) std::fill(nd.grad.begin(), nd.grad.end(), 0.0);
  }
  *grad_slot(loss) = seed;
  for (Id id = loss; id >= 0; --id) {
    Node& nd = nodes_[id];
    if (nd.back && !nd.grad.empty()) nd.back(*this);
  }
}

}  // namespace fdif
