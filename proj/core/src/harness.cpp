#include "fdif/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fdif/parallel.hpp"

namespace fdif {

namespace fs = std::filesystem;

const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::noise_curve: return "noise_curve";
    case ExperimentKind::per_bit_curve: return "per_bit_curve";
    case ExperimentKind::steps_to_solve: return "steps_to_solve";
    case ExperimentKind::replicated: return "replicated";
    case ExperimentKind::sweep: return "sweep";
    case ExperimentKind::ablate_sampling: return "ablate_sampling";
    case ExperimentKind::ablate_distribution: return "ablate_distribution";
  }
  return "?";
}

ExperimentKind experiment_kind_from_string(const std::string& s) {
  for (ExperimentKind k :
       {ExperimentKind::noise_curve, ExperimentKind::per_bit_curve, ExperimentKind::steps_to_solve,
        ExperimentKind::replicated, ExperimentKind::sweep, ExperimentKind::ablate_sampling,
        ExperimentKind::ablate_distribution}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown experiment kind: " + s);
}

std::string ExperimentSpec::to_json() const {
  nlohmann::json j;
  j["kind"] = to_string(kind);
  j["model_paths"] = model_paths;
  j["n_values"] = n_values;
  j["examples"] = examples;
  j["T"] = T;
  j["step_budgets"] = step_budgets;
  j["fractions"] = fractions;
  j["repeats"] = repeats;
  j["seed"] = seed;
  j["out_path"] = out_path;
  j["sampler_mode"] = to_string(sampler_mode);
  j["sample_kind"] = to_string(sample_kind);
  j["gamma"] = gamma;
  j["threads"] = threads;
  return j.dump(2);
}

ExperimentSpec ExperimentSpec::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ExperimentSpec s;
  s.kind = experiment_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("model_paths")) s.model_paths = j.at("model_paths").get<std::vector<std::string>>();
  if (j.contains("n_values")) s.n_values = j.at("n_values").get<std::vector<int>>();
  if (j.contains("examples")) s.examples = j.at("examples").get<int>();
  if (j.contains("T")) s.T = j.at("T").get<int>();
  if (j.contains("step_budgets")) s.step_budgets = j.at("step_budgets").get<std::vector<int64_t>>();
  if (j.contains("fractions")) s.fractions = j.at("fractions").get<std::vector<double>>();
  if (j.contains("repeats")) s.repeats = j.at("repeats").get<int>();
  if (j.contains("seed")) s.seed = j.at("seed").get<uint64_t>();
  if (j.contains("out_path")) s.out_path = j.at("out_path").get<std::string>();
  if (j.contains("sampler_mode")) s.sampler_mode = sampler_mode_from_string(j.at("sampler_mode").get<std::string>());
  if (j.contains("sample_kind")) s.sample_kind = distribution_kind_from_string(j.at("sample_kind").get<std::string>());
  if (j.contains("gamma")) s.gamma = j.at("gamma").get<double>();
  if (j.contains("threads")) s.threads = j.at("threads").get<int>();
  return s;
}

ExperimentSpec ExperimentSpec::load(const std::string& path) {
  std::ifstream f(path);
  FDIF_REQUIRE(f.good(), ConfigError, "cannot open experiment spec: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_json(ss.str());
}

namespace {
uint64_t fnv1a_bytes(const char* data, size_t size, uint64_t h = 1469598103934665603ULL) {
  for (size_t i = 0; i < size; ++i) {
    h ^= uint8_t(data[i]);
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)v);
  return buf;
}
}  // namespace

std::string ExperimentSpec::digest() const { return hex64(fnv1a_bytes(to_json().data(), to_json().size())); }

std::string file_digest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  FDIF_REQUIRE(f.good(), Error, "file_digest: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string s = ss.str();
  return hex64(fnv1a_bytes(s.data(), s.size()));
}

DenoiserFactory model_denoiser_factory(std::shared_ptr<Checkpoint> ck) {
  return [ck](const FactorPair&) -> std::unique_ptr<Denoiser> {
    struct Holder final : Denoiser {
      std::shared_ptr<Checkpoint> ck;
      ModelDenoiser model;
      explicit Holder(std::shared_ptr<Checkpoint> c)
          : ck(std::move(c)), model(ck->params, ck->header.model_config) {}
      ProbSeq predict(const ProbSeq& x, double ab, const ConditionSeq& cond) const override {
        return model.predict(x, ab, cond);
      }
    };
    return std::make_unique<Holder>(ck);
  };
}

namespace {

// CSV writer with the reproducibility stanza every experiment emits.
class CsvFile {
 public:
  CsvFile(const std::string& path, const ExperimentSpec& spec, const std::string& columns) {
    if (!path.empty()) {
      fs::path p(path);
      if (p.has_parent_path()) fs::create_directories(p.parent_path());
      file_.open(path, std::ios::trunc);
      FDIF_REQUIRE(file_.good(), Error, "cannot open output CSV: " + path);
      out_ = &file_;
    } else {
      out_ = &std::cout;
    }
    std::string ckpts = "none";
    if (!spec.model_paths.empty()) {
      ckpts.clear();
      for (size_t i = 0; i < spec.model_paths.size(); ++i) {
        if (i) ckpts += "+";
        ckpts += file_digest(spec.model_paths[i]);
      }
    }
    nlohmann::json cfg = nlohmann::json::parse(spec.to_json());
    *out_ << "# fdif experiment kind=" << to_string(spec.kind) << "\n"
          << "# seed=" << spec.seed << " config_digest=" << spec.digest()
          << " checkpoint_digest=" << ckpts << "\n"
          << "# config=" << cfg.dump() << "\n"
          << columns << "\n";
  }

  std::ostream& out() { return *out_; }

 private:
  std::ofstream file_;
  std::ostream* out_ = nullptr;
};

DenoiserFactory resolve_factory(const ExperimentSpec& spec, const DenoiserFactory& factory,
                                size_t which_model = 0) {
  if (factory) return factory;
  FDIF_REQUIRE(which_model < spec.model_paths.size(), ConfigError,
               "experiment needs a model checkpoint or an oracle factory");
  auto ck = std::make_shared<Checkpoint>(load_checkpoint(spec.model_paths[which_model]));
  return model_denoiser_factory(std::move(ck));
}

std::vector<FactorPair> test_batch(int n, int examples, uint64_t seed) {
  std::vector<FactorPair> out;
  out.reserve(size_t(examples));
  for (int j = 0; j < examples; ++j) {
    Rng rng(seed, {0x65786d70ULL, uint64_t(n), uint64_t(j)});
    out.push_back(gen_test_pair(n, {}, rng));
  }
  return out;
}

}  // namespace

std::vector<NoiseCurvePoint> noise_curve_points(const DenoiserFactory& factory, int n,
                                                int examples, DistributionKind kind, uint64_t seed,
                                                int threads) {
  std::vector<FactorPair> pairs = test_batch(n, examples, seed);
  std::vector<NoiseCurvePoint> out;
  DiffusionConfig dcfg;
  dcfg.kind = kind;
  for (int g = 0; g <= 20; ++g) {
    const double noise = 0.05 * g;
    const double alpha_bar = 1.0 - noise;
    std::vector<double> acc(static_cast<size_t>(examples), 0.0), base(static_cast<size_t>(examples), 0.0);
    parallel_for(effective_threads(threads), examples, [&](int64_t j) {
      const FactorPair& p = pairs[size_t(j)];
      Rng rng(seed, {0x6e6f6973ULL, uint64_t(g), uint64_t(j)});
      ProbSeq x0 = encode_pair(p);
      ProbSeq x_t = q_sample(x0, alpha_bar, dcfg, rng);
      auto den = factory(p);
      ProbSeq xh = den->predict(x_t, alpha_bar, encode_product(p.ab, p.n));
      acc[size_t(j)] = rounding_baseline(xh, x0);  // argmax agreement with truth
      base[size_t(j)] = rounding_baseline(x_t, x0);
    });
    double am = 0.0, bm = 0.0;
    for (int j = 0; j < examples; ++j) {
      am += acc[size_t(j)];
      bm += base[size_t(j)];
    }
    out.push_back({noise, am / examples, bm / examples});
  }
  return out;
}

void run_noise_curve(const ExperimentSpec& spec, const DenoiserFactory& factory) {
  DenoiserFactory f = resolve_factory(spec, factory);
  CsvFile csv(spec.out_path, spec, "noise_level,bit_accuracy,rounding_baseline");
  for (int n : spec.n_values) {
    auto pts = noise_curve_points(f, n, spec.examples, spec.sample_kind, spec.seed, spec.threads);
    for (const auto& p : pts) {
      csv.out() << p.noise_level << ',' << p.bit_accuracy << ',' << p.rounding_baseline << '\n';
    }
  }
}

std::vector<PerBitPoint> per_bit_points(const DenoiserFactory& factory, int n, int examples,
                                        DistributionKind kind, uint64_t seed, int threads) {
  std::vector<FactorPair> pairs = test_batch(n, examples, seed);
  std::vector<PerBitPoint> out;
  DiffusionConfig dcfg;
  dcfg.kind = kind;
  for (int g = 0; g <= 20; ++g) {
    const double noise = 0.05 * g;
    const double alpha_bar = 1.0 - noise;
    std::vector<std::vector<int>> hits{static_cast<size_t>(examples)};
    parallel_for(effective_threads(threads), examples, [&](int64_t j) {
      const FactorPair& p = pairs[size_t(j)];
      Rng rng(seed, {0x70626974ULL, uint64_t(g), uint64_t(j)});
      ProbSeq x0 = encode_pair(p);
      ProbSeq x_t = q_sample(x0, alpha_bar, dcfg, rng);
      auto den = factory(p);
      ProbSeq xh = den->predict(x_t, alpha_bar, encode_product(p.ab, p.n));
      std::vector<int> h(size_t(n), 0);
      for (int i = 0; i < n; ++i) h[size_t(i)] = (xh.argmax_row(i) == x0.argmax_row(i)) ? 1 : 0;
      hits[size_t(j)] = std::move(h);
    });
    for (int i = 0; i < n; ++i) {
      double a = 0.0;
      for (int j = 0; j < examples; ++j) a += hits[size_t(j)][size_t(i)];
      out.push_back({noise, i, a / examples});
    }
  }
  return out;
}

void run_per_bit_curve(const ExperimentSpec& spec, const DenoiserFactory& factory) {
  DenoiserFactory f = resolve_factory(spec, factory);
  CsvFile csv(spec.out_path, spec, "noise_level,bit_index,accuracy");
  for (int n : spec.n_values) {
    auto pts = per_bit_points(f, n, spec.examples, spec.sample_kind, spec.seed, spec.threads);
    for (const auto& p : pts) csv.out() << p.noise_level << ',' << p.bit_index << ',' << p.accuracy << '\n';
  }
}

std::vector<SampleTrace> solve_batch(const DenoiserFactory& factory, const SamplerConfig& cfg,
                                     int n, int examples, bool replicated, uint64_t seed,
                                     int threads) {
  std::vector<FactorPair> pairs;
  if (replicated) {
    Rng rng(seed, {0x7265706cULL, uint64_t(n)});
    pairs.assign(size_t(examples), gen_test_pair(n, {}, rng));
  } else {
    pairs = test_batch(n, examples, seed);
  }
  std::vector<SampleTrace> traces{static_cast<size_t>(examples)};
  parallel_for(effective_threads(threads), examples, [&](int64_t j) {
    auto den = factory(pairs[size_t(j)]);
    Rng rng(seed, {0x736f6c76ULL, uint64_t(n), uint64_t(j)});
    traces[size_t(j)] = run_sampler(*den, cfg, pairs[size_t(j)].ab, n, rng);
  });
  return traces;
}

namespace {

void run_steps_like(const ExperimentSpec& spec, const DenoiserFactory& factory, bool replicated) {
  DenoiserFactory f = resolve_factory(spec, factory);
  CsvFile csv(spec.out_path, spec, "n,fraction,steps_mean,steps_std,reached_repeats,repeats");
  for (int n : spec.n_values) {
    std::vector<std::vector<SampleTrace>> runs;
    for (int r = 0; r < spec.repeats; ++r) {
      SamplerConfig scfg;
      scfg.T = spec.T;
      scfg.gamma = spec.gamma;
      scfg.mode = spec.sampler_mode;
      scfg.sample_kind = spec.sample_kind;
      scfg.seed = derive_seed(spec.seed, {uint64_t(n), uint64_t(r)});
      scfg.keep_records = false;
      runs.push_back(solve_batch(f, scfg, n, spec.examples, replicated,
                                 derive_seed(spec.seed, {uint64_t(r)}), spec.threads));
    }
    for (double frac : spec.fractions) {
      std::vector<double> vals;
      for (const auto& traces : runs) {
        if (auto s = steps_to_fraction(traces, frac)) vals.push_back(double(*s));
      }
      csv.out() << n << ',' << frac << ',';
      if (vals.empty()) {
        csv.out() << "NA,NA";
      } else {
        double mean = 0.0;
        for (double v : vals) mean += v;
        mean /= double(vals.size());
        double var = 0.0;
        for (double v : vals) var += (v - mean) * (v - mean);
        var = vals.size() > 1 ? var / double(vals.size() - 1) : 0.0;
        csv.out() << mean << ',' << std::sqrt(var);
      }
      csv.out() << ',' << vals.size() << ',' << spec.repeats << '\n';
    }
  }
}

}  // namespace

void run_steps_to_solve(const ExperimentSpec& spec, const DenoiserFactory& factory) {
  run_steps_like(spec, factory, /*replicated=*/false);
}

void run_replicated(const ExperimentSpec& spec, const DenoiserFactory& factory) {
  run_steps_like(spec, factory, /*replicated=*/true);
}

void run_sweep(const ExperimentSpec& spec, const DenoiserFactory& factory) {
  std::vector<int64_t> budgets = spec.step_budgets;
  if (budgets.empty()) {
    for (int64_t b = 1; b <= (1 << 14); b *= 2) budgets.push_back(b);
  }
  const int64_t max_budget = *std::max_element(budgets.begin(), budgets.end());
  CsvFile csv(spec.out_path, spec, "train_steps,diffusion_steps,success_rate");
  for (size_t mi = 0; mi < std::max<size_t>(1, spec.model_paths.size()); ++mi) {
    int64_t train_steps = 0;
    DenoiserFactory f = factory;
    if (!factory) {
      auto ck = std::make_shared<Checkpoint>(load_checkpoint(spec.model_paths[mi]));
      train_steps = ck->header.step;
      f = model_denoiser_factory(std::move(ck));
    }
    for (int n : spec.n_values) {
      SamplerConfig scfg;
      scfg.T = int(max_budget);
      scfg.gamma = spec.gamma;
      scfg.mode = spec.sampler_mode;
      scfg.sample_kind = spec.sample_kind;
      scfg.seed = derive_seed(spec.seed, {uint64_t(n), uint64_t(mi)});
      scfg.keep_records = false;
      auto traces = solve_batch(f, scfg, n, spec.examples, false,
                                derive_seed(spec.seed, {uint64_t(mi)}), spec.threads);
      for (int64_t b : budgets) {
        int solved = 0;
        for (const auto& tr : traces) {
          if (tr.outcome.solved && tr.outcome.solved_step <= b) ++solved;
        }
        csv.out() << train_steps << ',' << b << ',' << double(solved) / spec.examples << '\n';
      }
    }
    if (factory) break;  // oracle override has no checkpoint series
  }
}

void run_ablations(const ExperimentSpec& spec, const DenoiserFactory& factory) {
  if (spec.kind == ExperimentKind::ablate_sampling) {
    CsvFile csv(spec.out_path, spec, "mode,n,steps_mean,steps_std,reached_repeats,repeats");
    DenoiserFactory f = resolve_factory(spec, factory);
    for (SamplerMode mode : {SamplerMode::modified, SamplerMode::standard}) {
      for (int n : spec.n_values) {
        std::vector<double> vals;
        for (int r = 0; r < spec.repeats; ++r) {
          SamplerConfig scfg;
          scfg.T = spec.T;
          scfg.gamma = spec.gamma;
          scfg.mode = mode;
          scfg.sample_kind = spec.sample_kind;
          scfg.seed = derive_seed(spec.seed, {uint64_t(mode == SamplerMode::standard), uint64_t(n), uint64_t(r)});
          scfg.keep_records = false;
          auto traces = solve_batch(f, scfg, n, spec.examples, false,
                                    derive_seed(spec.seed, {uint64_t(r)}), spec.threads);
          if (auto s = steps_to_fraction(traces, 0.25)) vals.push_back(double(*s));
        }
        csv.out() << to_string(mode) << ',' << n << ',';
        if (vals.empty()) {
          csv.out() << "NA,NA";
        } else {
          double mean = 0.0;
          for (double v : vals) mean += v;
          mean /= double(vals.size());
          double var = 0.0;
          for (double v : vals) var += (v - mean) * (v - mean);
          var = vals.size() > 1 ? var / double(vals.size() - 1) : 0.0;
          csv.out() << mean << ',' << std::sqrt(var);
        }
        csv.out() << ',' << vals.size() << ',' << spec.repeats << '\n';
      }
    }
    return;
  }
  FDIF_REQUIRE(spec.kind == ExperimentKind::ablate_distribution, ConfigError,
               "run_ablations: kind must be ablate_sampling or ablate_distribution");
  // Variant per checkpoint: [relaxed-trained, categorical-trained].
  FDIF_REQUIRE(factory != nullptr || spec.model_paths.size() == 2, ConfigError,
               "ablate_distribution needs two checkpoints (relaxed, categorical)");
  CsvFile csv(spec.out_path, spec, "variant,n,trial,success_rate");
  const char* variants[2] = {"relaxed", "categorical"};
  for (int v = 0; v < 2; ++v) {
    DenoiserFactory f = resolve_factory(spec, factory, size_t(v));
    for (int n : spec.n_values) {
      for (int r = 0; r < spec.repeats; ++r) {
        SamplerConfig scfg;
        scfg.T = spec.T;
        scfg.gamma = spec.gamma;
        scfg.mode = spec.sampler_mode;
        // Inference noising matches each variant's training distribution.
        scfg.sample_kind = (v == 0) ? DistributionKind::relaxed : DistributionKind::categorical;
        scfg.seed = derive_seed(spec.seed, {uint64_t(v), uint64_t(n), uint64_t(r)});
        scfg.keep_records = false;
        auto traces = solve_batch(f, scfg, n, spec.examples, false,
                                  derive_seed(spec.seed, {uint64_t(r)}), spec.threads);
        int solved = 0;
        for (const auto& tr : traces) solved += tr.outcome.solved ? 1 : 0;
        csv.out() << variants[v] << ',' << n << ',' << r << ',' << double(solved) / spec.examples
                  << '\n';
      }
    }
  }
}

// ---------------- acceptance profiles ----------------

ModelConfig acceptance_model_config() { return ModelConfig::with_m(96); }

TrainConfig acceptance_train_config(DistributionKind kind) {
  TrainConfig c;
  c.n_list = {8, 16};
  c.batch_size = 8;
  c.total_steps = 50000;
  c.learning_rate = 1e-3;
  c.warmup_steps = 1000;
  c.t_train = 1000;
  c.dataset_size = 1000000;
  c.seed = 20260810;
  c.distribution_kind = kind;
  c.val_size = 512;
  c.val_every = 2500;
  return c;
}

std::string acceptance_checkpoint_path(const std::string& cache_dir, DistributionKind kind) {
  TrainConfig c = acceptance_train_config(kind);
  return cache_dir + "/accept_" + std::string(to_string(kind)) + "_" + c.digest() + "/ckpt_" +
         std::to_string(c.total_steps) + ".fdif";
}

std::string ensure_acceptance_checkpoint(const std::string& cache_dir, DistributionKind kind,
                                         std::ostream& log) {
  TrainConfig tcfg = acceptance_train_config(kind);
  if (const char* t = std::getenv("FDIF_THREADS")) tcfg.threads = std::atoi(t);
  const std::string final_path = acceptance_checkpoint_path(cache_dir, kind);
  if (fs::exists(final_path)) {
    log << "[cache] using trained checkpoint " << final_path << "\n";
    return final_path;
  }
  const fs::path dir = fs::path(final_path).parent_path();
  fs::create_directories(dir);
  Trainer trainer(acceptance_model_config(), tcfg);
  // Resume from the newest intermediate checkpoint if a previous run stopped.
  int64_t best = 0;
  std::string best_path;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("ckpt_", 0) == 0 && e.path().extension() == ".fdif") {
      int64_t s = std::atoll(name.substr(5).c_str());
      if (s > best) {
        best = s;
        best_path = e.path().string();
      }
    }
  }
  if (best > 0) {
    log << "[resume] continuing " << to_string(kind) << " run from step " << best << "\n";
    load_checkpoint_into(best_path, trainer.params(), &trainer.opt_state());
  } else {
    log << "[train] starting " << to_string(kind) << " desk-scale run (" << tcfg.total_steps
        << " steps)\n";
  }
  log.flush();
  trainer.run(dir.string(), (dir / "train_log.csv").string(), /*checkpoint_every=*/2500);
  return final_path;
}

}  // namespace fdif
