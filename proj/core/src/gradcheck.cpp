#include "fdif/gradcheck.hpp"

#include <cmath>
#include <ostream>

#include "fdif/denoiser.hpp"

namespace fdif {

GradCheckResult check_gradient(const std::string& name,
                               const std::function<double(const std::vector<double>&)>& f,
                               const std::vector<double>& x, const std::vector<double>& analytic,
                               const GradCheckConfig& cfg) {
  FDIF_REQUIRE(x.size() == analytic.size(), ShapeError, "check_gradient: size mismatch");
  GradCheckResult res;
  res.name = name;
  res.checked = int(x.size());
  std::vector<double> xp = x;
  for (size_t i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + cfg.step;
    const double fp = f(xp);
    xp[i] = x[i] - cfg.step;
    const double fm = f(xp);
    xp[i] = x[i];
    const double fd = (fp - fm) / (2.0 * cfg.step);
    const double a = analytic[i];
    if (std::abs(a) > cfg.abs_floor) {
      res.max_rel_err = std::max(res.max_rel_err, std::abs(fd - a) / std::abs(a));
    } else {
      res.max_abs_err = std::max(res.max_abs_err, std::abs(fd - a));
    }
  }
  res.pass = res.max_rel_err < cfg.rel_tol && res.max_abs_err < cfg.abs_tol;
  return res;
}

namespace {

std::vector<double> random_vec(size_t size, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(size);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

ProbSeq random_probseq(int n, Rng& rng) {
  ProbSeq x(n, 2);
  for (int i = 0; i < n; ++i) {
    double p = rng.uniform(0.05, 0.95);
    x.at(i, 0) = p;
    x.at(i, 1) = 1.0 - p;
  }
  return x;
}

// One op under test: rebuild the tape from flat inputs, return the scalar
// loss and (on demand) the analytic input gradient.
struct OpProbe {
  std::string name;
  std::vector<double> x0;
  std::function<double(const std::vector<double>&, std::vector<double>*)> eval;

  double value(const std::vector<double>& x) const { return eval(x, nullptr); }
};

GradCheckResult probe_op(const OpProbe& probe, const GradCheckConfig& cfg) {
  std::vector<double> analytic;
  probe.eval(probe.x0, &analytic);
  auto f = [&](const std::vector<double>& x) { return probe.eval(x, nullptr); };
  return check_gradient(probe.name, f, probe.x0, analytic, cfg);
}

void merge_worst(std::vector<GradCheckResult>& out, GradCheckResult r) {
  for (GradCheckResult& e : out) {
    if (e.name == r.name) {
      e.max_rel_err = std::max(e.max_rel_err, r.max_rel_err);
      e.max_abs_err = std::max(e.max_abs_err, r.max_abs_err);
      e.checked += r.checked;
      e.pass = e.pass && r.pass;
      return;
    }
  }
  out.push_back(std::move(r));
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckConfig& cfg, std::ostream* log) {
  std::vector<GradCheckResult> results;
  Rng rng(cfg.seed);

  auto simple_probe = [&](const std::string& name, int n, int c,
                          const std::function<Tape::Id(Tape&, Tape::Id)>& build) {
    for (int inst = 0; inst < cfg.instances_per_op; ++inst) {
      std::vector<double> x0 = random_vec(size_t(n) * c, rng);
      OpProbe probe;
      probe.name = name;
      probe.x0 = x0;
      // Scalar head: fixed random weighted sum over the op output.
      std::vector<double> head;
      {
        Tape t;
        Tape::Id in = t.input(n, c, x0.data());
        Tape::Id out = build(t, in);
        head = random_vec(t.value(out).size(), rng);
      }
      probe.eval = [=](const std::vector<double>& x, std::vector<double>* grad_out) {
        Tape t;
        Tape::Id in = t.input(n, c, x.data());
        Tape::Id out = build(t, in);
        Tape::Id loss = t.weighted_sum(out, head);
        if (grad_out != nullptr) {
          t.backward(loss);
          *grad_out = t.grad(in);
          if (grad_out->empty()) grad_out->assign(x.size(), 0.0);
        }
        return t.scalar(loss);
      };
      merge_worst(results, probe_op(probe, cfg));
    }
  };

  const int n = 8, c = 4;
  simple_probe("gelu", n, c, [](Tape& t, Tape::Id x) { return t.gelu(x); });
  simple_probe("sigmoid", n, c, [](Tape& t, Tape::Id x) { return t.sigmoid(x); });
  simple_probe("softmax_rows", n, c, [](Tape& t, Tape::Id x) { return t.softmax_rows(x); });
  simple_probe("instance_norm", n, c, [](Tape& t, Tape::Id x) { return t.instance_norm(x); });
  simple_probe("forward_shuffle", n, c, [](Tape& t, Tape::Id x) { return t.forward_shuffle(x); });
  simple_probe("reverse_shuffle", n, c, [](Tape& t, Tape::Id x) { return t.reverse_shuffle(x); });
  simple_probe("sum", n, c, [](Tape& t, Tape::Id x) { return t.sum(x); });

  {
    uint64_t mask_seed = 0xd50fULL;
    simple_probe("dropout", n, c, [mask_seed](Tape& t, Tape::Id x) {
      return t.dropout(x, 0.3, true, mask_seed);
    });
  }

  // add / mul / concat / scale_channels: second operand folded into the flat
  // input so both gradients get checked at once.
  for (int inst = 0; inst < cfg.instances_per_op; ++inst) {
    const size_t half = size_t(n) * c;
    OpProbe probe;
    probe.name = "add_mul_concat";
    probe.x0 = random_vec(2 * half, rng);
    std::vector<double> head;
    auto build = [&](Tape& t, const std::vector<double>& x, Tape::Id& a, Tape::Id& b) {
      a = t.input(n, c, x.data());
      b = t.input(n, c, x.data() + half);
      Tape::Id cat = t.concat_channels({t.add(a, b), t.mul(a, b)});
      return cat;
    };
    {
      Tape t;
      Tape::Id a, b;
      Tape::Id out = build(t, probe.x0, a, b);
      head = random_vec(t.value(out).size(), rng);
    }
    probe.eval = [=](const std::vector<double>& x, std::vector<double>* grad_out) {
      Tape t;
      Tape::Id a, b;
      Tape::Id out = build(t, x, a, b);
      Tape::Id loss = t.weighted_sum(out, head);
      if (grad_out != nullptr) {
        t.backward(loss);
        grad_out->assign(x.size(), 0.0);
        const auto &ga = t.grad(a), &gb = t.grad(b);
        for (size_t i = 0; i < half; ++i) {
          if (!ga.empty()) (*grad_out)[i] = ga[i];
          if (!gb.empty()) (*grad_out)[half + i] = gb[i];
        }
      }
      return t.scalar(loss);
    };
    merge_worst(results, probe_op(probe, cfg));
  }

  // scale_channels with a parameter vector: checks both x and v gradients.
  for (int inst = 0; inst < cfg.instances_per_op; ++inst) {
    const size_t nx = size_t(n) * c;
    OpProbe probe;
    probe.name = "scale_channels";
    probe.x0 = random_vec(nx + size_t(c), rng);
    std::vector<double> head = random_vec(nx, rng);
    probe.eval = [=](const std::vector<double>& x, std::vector<double>* grad_out) {
      Parameter v("v", {c});
      std::copy(x.begin() + nx, x.end(), v.value.begin());
      Tape t;
      Tape::Id in = t.input(n, c, x.data());
      Tape::Id vv = t.param_vector(v);
      Tape::Id out = t.scale_channels(in, t.sigmoid(vv));
      Tape::Id loss = t.weighted_sum(out, head);
      if (grad_out != nullptr) {
        v.zero_grad();
        t.backward(loss);
        grad_out->assign(x.size(), 0.0);
        const auto& gin = t.grad(in);
        for (size_t i = 0; i < nx; ++i) (*grad_out)[i] = gin[i];
        for (int j = 0; j < c; ++j) (*grad_out)[nx + j] = v.grad[j];
      }
      return t.scalar(loss);
    };
    merge_worst(results, probe_op(probe, cfg));
  }

  // conv1d and linear: input plus full parameter blocks in one flat vector.
  for (int inst = 0; inst < cfg.instances_per_op; ++inst) {
    const int ci = 2, co = 2, nn = 6;
    const size_t nx = size_t(nn) * ci, nw = size_t(ci) * co * 3, nb = size_t(co);
    OpProbe probe;
    probe.name = "conv1d";
    probe.x0 = random_vec(nx + nw + nb, rng);
    std::vector<double> head = random_vec(size_t(nn) * co, rng);
    probe.eval = [=](const std::vector<double>& x, std::vector<double>* grad_out) {
      Parameter w("w", {ci, co, 3}), b("b", {co});
      std::copy(x.begin() + nx, x.begin() + nx + nw, w.value.begin());
      std::copy(x.begin() + nx + nw, x.end(), b.value.begin());
      Tape t;
      Tape::Id in = t.input(nn, ci, x.data());
      Tape::Id out = t.conv1d(in, w, b);
      Tape::Id loss = t.weighted_sum(out, head);
      if (grad_out != nullptr) {
        w.zero_grad();
        b.zero_grad();
        t.backward(loss);
        grad_out->assign(x.size(), 0.0);
        const auto& gin = t.grad(in);
        for (size_t i = 0; i < nx; ++i) (*grad_out)[i] = gin[i];
        std::copy(w.grad.begin(), w.grad.end(), grad_out->begin() + nx);
        std::copy(b.grad.begin(), b.grad.end(), grad_out->begin() + nx + nw);
      }
      return t.scalar(loss);
    };
    merge_worst(results, probe_op(probe, cfg));
  }

  for (int inst = 0; inst < cfg.instances_per_op; ++inst) {
    const int ci = 3, co = 2, nn = 5;
    const size_t nx = size_t(nn) * ci, nw = size_t(ci) * co, nb = size_t(co);
    OpProbe probe;
    probe.name = "linear";
    probe.x0 = random_vec(nx + nw + nb, rng);
    std::vector<double> head = random_vec(size_t(nn) * co, rng);
    probe.eval = [=](const std::vector<double>& x, std::vector<double>* grad_out) {
      Parameter w("w", {ci, co}), b("b", {co});
      std::copy(x.begin() + nx, x.begin() + nx + nw, w.value.begin());
      std::copy(x.begin() + nx + nw, x.end(), b.value.begin());
      Tape t;
      Tape::Id in = t.input(nn, ci, x.data());
      Tape::Id out = t.linear(in, w, b);
      Tape::Id loss = t.weighted_sum(out, head);
      if (grad_out != nullptr) {
        w.zero_grad();
        b.zero_grad();
        t.backward(loss);
        grad_out->assign(x.size(), 0.0);
        const auto& gin = t.grad(in);
        for (size_t i = 0; i < nx; ++i) (*grad_out)[i] = gin[i];
        std::copy(w.grad.begin(), w.grad.end(), grad_out->begin() + nx);
        std::copy(b.grad.begin(), b.grad.end(), grad_out->begin() + nx + nw);
      }
      return t.scalar(loss);
    };
    merge_worst(results, probe_op(probe, cfg));
  }

  // kl_vs_posterior against the prediction argument.
  for (int inst = 0; inst < cfg.instances_per_op; ++inst) {
    const int nn = 6;
    ProbSeq x_t = random_probseq(nn, rng);
    ProbSeq x0 = random_probseq(nn, rng);
    NoiseLevel lvl = level_from_alpha_bar(rng.uniform(0.05, 0.95), 100);
    OpProbe probe;
    probe.name = "kl_vs_posterior";
    ProbSeq xh = random_probseq(nn, rng);
    probe.x0 = xh.p;
    probe.eval = [=](const std::vector<double>& x, std::vector<double>* grad_out) {
      Tape t;
      Tape::Id in = t.input(nn, 2, x.data());
      Tape::Id loss = t.kl_vs_posterior(in, x_t, x0, lvl);
      if (grad_out != nullptr) {
        t.backward(loss);
        *grad_out = t.grad(in);
      }
      return t.scalar(loss);
    };
    merge_worst(results, probe_op(probe, cfg));
  }

  // Full composition: kl_loss of the denoiser forward at n=8, m=4 (depth 12),
  // checked against every parameter entry.
  {
    const int nn = 8;
    ModelConfig mc = ModelConfig::with_m(4);
    Rng prng(cfg.seed, {0x6d6f64656cULL});
    DenoiserParams params = init_params(mc, prng);
    // Move Z off its zero init so the candidate branch carries gradient.
    for (double& z : params.gate_z.value) z = prng.uniform(-0.5, 0.5);

    Rng drng(cfg.seed, {0x64617461ULL});
    FactorPair pair = gen_training_pair(nn, drng);
    ProbSeq x0 = encode_pair(pair);
    const double alpha_bar = 0.55;
    NoiseLevel lvl = level_from_alpha_bar(alpha_bar, 100);
    DiffusionConfig dcfg;
    ProbSeq x_t = q_sample(x0, alpha_bar, dcfg, drng);
    ConditionSeq cond = encode_product(pair.ab, nn);

    std::vector<Parameter*> ps = params.all();
    std::vector<double> flat, analytic;
    for (Parameter* p : ps) flat.insert(flat.end(), p->value.begin(), p->value.end());
    {
      params.zero_grads();
      Tape t;
      Tape::Id out = denoiser_forward(t, x_t, alpha_bar, cond, params, mc, RunMode::infer);
      Tape::Id loss = t.kl_vs_posterior(out, x_t, x0, lvl);
      t.backward(loss);
      for (Parameter* p : ps) analytic.insert(analytic.end(), p->grad.begin(), p->grad.end());
    }
    auto f = [&](const std::vector<double>& x) {
      size_t off = 0;
      for (Parameter* p : ps) {
        std::copy(x.begin() + off, x.begin() + off + p->value.size(), p->value.begin());
        off += p->value.size();
      }
      Tape t;
      Tape::Id out = denoiser_forward(t, x_t, alpha_bar, cond, params, mc, RunMode::infer);
      Tape::Id loss = t.kl_vs_posterior(out, x_t, x0, lvl);
      double v = t.scalar(loss);
      return v;
    };
    GradCheckResult r = check_gradient("kl_of_forward_n8_m4", f, flat, analytic, cfg);
    f(flat);  // restore original parameter values
    results.push_back(std::move(r));
  }

  if (log != nullptr) {
    for (const GradCheckResult& r : results) {
      *log << (r.pass ? "[pass] " : "[FAIL] ") << r.name << "  rel=" << r.max_rel_err
           << "  abs=" << r.max_abs_err << "  entries=" << r.checked << "\n";
    }
  }
  return results;
}

bool all_passed(const std::vector<GradCheckResult>& results) {
  for (const GradCheckResult& r : results) {
    if (!r.pass) return false;
  }
  return !results.empty();
}

}  // namespace fdif
