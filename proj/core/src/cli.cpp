#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "fdif/harness.hpp"
#include "fdif/parallel.hpp"

namespace fdif {

namespace fs = std::filesystem;

namespace {

void report_failure(std::ostream& os, const SampleTrace& trace, UInt ab) {
  const UInt a = trace.outcome.a, b = trace.outcome.b;
  const UInt prod = a * b;
  os << "unsolved: final candidate " << a.to_decimal() << " * " << b.to_decimal() << " = "
     << prod.to_decimal() << " (target " << ab.to_decimal() << "), bit distance "
     << bit_distance(prod, ab) << ", a " << (is_prime(a) ? "prime" : "composite") << ", b "
     << (is_prime(b) ? "prime" : "composite") << "\n";
}

ExperimentSpec spec_from_cli(const std::string& spec_path, ExperimentKind kind,
                             const std::vector<std::string>& models, const std::vector<int>& ns,
                             int examples, int T, uint64_t seed, const std::string& out,
                             const std::string& mode, const std::string& kind_s, int repeats,
                             const std::vector<int64_t>& budgets, int threads) {
  ExperimentSpec s;
  if (!spec_path.empty()) {
    s = ExperimentSpec::load(spec_path);
  }
  s.kind = kind;
  if (!models.empty()) s.model_paths = models;
  if (!ns.empty()) s.n_values = ns;
  if (examples > 0) s.examples = examples;
  if (T > 0) s.T = T;
  if (seed != ~uint64_t(0)) s.seed = seed;
  if (!out.empty()) s.out_path = out;
  if (!mode.empty()) s.sampler_mode = sampler_mode_from_string(mode);
  if (!kind_s.empty()) s.sample_kind = distribution_kind_from_string(kind_s);
  if (repeats > 0) s.repeats = repeats;
  if (!budgets.empty()) s.step_budgets = budgets;
  if (threads >= 0) s.threads = threads;
  return s;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"fdif: integer factorization by iterative denoising"};
  app.require_subcommand(1);

  // ---- train ----
  auto* train = app.add_subcommand("train", "train a denoiser");
  std::string train_config_path, train_out = "runs/default", train_log;
  int train_m = 96;
  std::vector<int> train_nlist;
  int64_t train_steps = -1;
  int train_batch = -1;
  double train_lr = -1;
  uint64_t train_seed = ~uint64_t(0);
  std::string train_kind;
  int64_t ckpt_every = 10000;
  int train_threads = -1;
  bool quiet = false;
  train->add_option("--config", train_config_path, "TrainConfig JSON file");
  train->add_option("--out", train_out, "output directory for checkpoints");
  train->add_option("--log", train_log, "training log CSV (default <out>/train_log.csv)");
  train->add_option("--m", train_m, "feature maps");
  train->add_option("--n-list", train_nlist, "bit lengths to train on");
  train->add_option("--steps", train_steps, "total optimizer steps");
  train->add_option("--batch", train_batch, "examples per length per step");
  train->add_option("--lr", train_lr, "learning rate");
  train->add_option("--seed", train_seed, "rng seed");
  train->add_option("--kind", train_kind, "relaxed|categorical");
  train->add_option("--checkpoint-every", ckpt_every, "checkpoint cadence in steps");
  train->add_option("--threads", train_threads, "worker threads (0 = hardware)");
  train->add_flag("--quiet", quiet, "suppress per-checkpoint progress lines");

  // ---- factor ----
  auto* factor = app.add_subcommand("factor", "factor one number with the trained denoiser");
  std::string factor_n_str, factor_model;
  int factor_T = 1024, factor_replicas = 1, factor_n_bits = 0, factor_threads = 0;
  uint64_t factor_seed = 0;
  double factor_gamma = 0.9;
  std::string factor_mode = "modified", factor_kind = "relaxed";
  factor->add_option("N", factor_n_str, "number to factor (decimal)")->required();
  factor->add_option("--model", factor_model, "checkpoint path")->required();
  factor->add_option("--steps", factor_T, "diffusion step budget");
  factor->add_option("--seed", factor_seed, "rng seed");
  factor->add_option("--replicas", factor_replicas, "parallel chains on the same number");
  factor->add_option("--n", factor_n_bits, "sequence length (default: bit length rounded up to even)");
  factor->add_option("--gamma", factor_gamma, "retention coefficient");
  factor->add_option("--mode", factor_mode, "modified|standard");
  factor->add_option("--kind", factor_kind, "relaxed|categorical sampling for the network input");
  factor->add_option("--threads", factor_threads, "worker threads");

  // ---- oracle ----
  auto* oracle = app.add_subcommand("oracle", "classical factorization baseline");
  std::string oracle_n_str;
  uint64_t oracle_seed = 1;
  oracle->add_option("N", oracle_n_str, "number to factor (decimal)")->required();
  oracle->add_option("--seed", oracle_seed, "rng seed");

  // ---- gradcheck ----
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");

  // ---- gen-testset ----
  auto* gen = app.add_subcommand("gen-testset", "generate a semiprime test set manifest");
  std::vector<int> gen_ns = {16};
  int64_t gen_count = 256;
  uint64_t gen_seed = 0;
  std::string gen_out = "testset.json", gen_train_manifest;
  gen->add_option("--n", gen_ns, "bit lengths");
  gen->add_option("--count", gen_count, "pairs per length");
  gen->add_option("--seed", gen_seed, "rng seed");
  gen->add_option("--out", gen_out, "manifest output path");
  gen->add_option("--train-manifest", gen_train_manifest,
                  "training manifest whose multiplicands are excluded");

  // ---- eval ----
  auto* eval = app.add_subcommand("eval", "solve a test set and report success rate");
  std::string eval_model, eval_testset, eval_out;
  std::vector<int> eval_ns = {16};
  int eval_examples = 256, eval_T = 1024, eval_threads = 0;
  uint64_t eval_seed = 0;
  std::string eval_mode = "modified", eval_kind = "relaxed";
  double eval_gamma = 0.9;
  eval->add_option("--model", eval_model, "checkpoint path")->required();
  eval->add_option("--testset", eval_testset, "test manifest (otherwise generated from --seed)");
  eval->add_option("--n", eval_ns, "bit lengths when generating");
  eval->add_option("--examples", eval_examples, "instances per length when generating");
  eval->add_option("--steps", eval_T, "diffusion step budget");
  eval->add_option("--seed", eval_seed, "rng seed");
  eval->add_option("--mode", eval_mode, "modified|standard");
  eval->add_option("--kind", eval_kind, "relaxed|categorical");
  eval->add_option("--gamma", eval_gamma, "retention coefficient");
  eval->add_option("--threads", eval_threads, "worker threads");
  eval->add_option("--out", eval_out, "optional CSV path for per-instance rows");

  // ---- experiment drivers ----
  struct ExpCli {
    CLI::App* cmd;
    ExperimentKind kind;
    std::string spec_path, out, mode, kind_s;
    std::vector<std::string> models;
    std::vector<int> ns;
    std::vector<int64_t> budgets;
    int examples = 0, T = 0, repeats = 0, threads = -1;
    uint64_t seed = ~uint64_t(0);
  };
  std::vector<ExpCli> exps;
  auto add_exp = [&](const char* name, const char* help, ExperimentKind kind) {
    ExpCli e;
    e.cmd = app.add_subcommand(name, help);
    e.kind = kind;
    exps.push_back(std::move(e));
    ExpCli& ref = exps.back();
    ref.cmd->add_option("--spec", ref.spec_path, "ExperimentSpec JSON file");
    ref.cmd->add_option("--model", ref.models, "checkpoint path(s)");
    ref.cmd->add_option("--n", ref.ns, "bit lengths");
    ref.cmd->add_option("--examples", ref.examples, "batch size per point");
    ref.cmd->add_option("--steps", ref.T, "diffusion step budget");
    ref.cmd->add_option("--budgets", ref.budgets, "sweep step budgets");
    ref.cmd->add_option("--repeats", ref.repeats, "experiment repetitions");
    ref.cmd->add_option("--seed", ref.seed, "rng seed");
    ref.cmd->add_option("--out", ref.out, "output CSV path (default stdout)");
    ref.cmd->add_option("--mode", ref.mode, "modified|standard");
    ref.cmd->add_option("--kind", ref.kind_s, "relaxed|categorical");
    ref.cmd->add_option("--threads", ref.threads, "worker threads");
  };
  add_exp("noise-curve", "bit accuracy vs noise level", ExperimentKind::noise_curve);
  add_exp("per-bit", "per-position accuracy vs noise level", ExperimentKind::per_bit_curve);
  add_exp("steps", "diffusion steps to reach solve fractions", ExperimentKind::steps_to_solve);
  add_exp("replicated", "steps-to-fraction on replicated batches", ExperimentKind::replicated);
  add_exp("sweep", "success rate over checkpoints x step budgets", ExperimentKind::sweep);
  auto* ablate = app.add_subcommand("ablate", "sampling / distribution ablations");
  std::string ab_what = "sampling", ab_spec, ab_out, ab_mode, ab_kind;
  std::vector<std::string> ab_models;
  std::vector<int> ab_ns;
  int ab_examples = 0, ab_T = 0, ab_repeats = 0, ab_threads = -1;
  uint64_t ab_seed = ~uint64_t(0);
  ablate->add_option("what", ab_what, "sampling|distribution")->required();
  ablate->add_option("--spec", ab_spec, "ExperimentSpec JSON file");
  ablate->add_option("--model", ab_models, "checkpoint path(s); distribution: relaxed then categorical");
  ablate->add_option("--n", ab_ns, "bit lengths");
  ablate->add_option("--examples", ab_examples, "batch size");
  ablate->add_option("--steps", ab_T, "diffusion step budget");
  ablate->add_option("--repeats", ab_repeats, "trials");
  ablate->add_option("--seed", ab_seed, "rng seed");
  ablate->add_option("--out", ab_out, "output CSV path");
  ablate->add_option("--mode", ab_mode, "modified|standard (distribution ablation)");
  ablate->add_option("--kind", ab_kind, "relaxed|categorical (sampling ablation)");
  ablate->add_option("--threads", ab_threads, "worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  try {
    if (train->parsed()) {
      TrainConfig cfg;
      if (!train_config_path.empty()) {
        std::ifstream f(train_config_path);
        FDIF_REQUIRE(f.good(), ConfigError, "cannot open --config " + train_config_path);
        std::stringstream ss;
        ss << f.rdbuf();
        cfg = TrainConfig::from_json(ss.str());
      }
      if (!train_nlist.empty()) cfg.n_list = train_nlist;
      if (train_steps >= 0) cfg.total_steps = train_steps;
      if (train_batch > 0) cfg.batch_size = train_batch;
      if (train_lr > 0) cfg.learning_rate = train_lr;
      if (train_seed != ~uint64_t(0)) cfg.seed = train_seed;
      if (!train_kind.empty()) cfg.distribution_kind = distribution_kind_from_string(train_kind);
      if (train_threads >= 0) cfg.threads = train_threads;
      cfg.validate();
      ModelConfig mc = ModelConfig::with_m(train_m);
      Trainer trainer(mc, cfg);
      // Resume from the newest checkpoint in the output directory.
      if (fs::exists(train_out)) {
        int64_t best = 0;
        std::string best_path;
        for (const auto& e : fs::directory_iterator(train_out)) {
          const std::string name = e.path().filename().string();
          if (name.rfind("ckpt_", 0) == 0 && e.path().extension() == ".fdif") {
            int64_t s = std::atoll(name.substr(5).c_str());
            if (s > best) {
              best = s;
              best_path = e.path().string();
            }
          }
        }
        if (best > 0 && best < cfg.total_steps) {
          std::cerr << "resuming from step " << best << "\n";
          load_checkpoint_into(best_path, trainer.params(), &trainer.opt_state());
        } else if (best >= cfg.total_steps) {
          std::cout << "already trained to step " << best << "\n";
          return 0;
        }
      }
      if (train_log.empty()) train_log = train_out + "/train_log.csv";
      fs::create_directories(train_out);
      const auto t0 = std::chrono::steady_clock::now();
      std::string final_path = trainer.run(
          train_out, train_log, ckpt_every, [&](int64_t s, const StepResult& res) {
            if (!quiet && (s % 500 == 0 || s == 1)) {
              const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
              std::cerr << "step " << s << "/" << cfg.total_steps << " loss " << res.total_loss
                        << " (" << el << "s)\n";
            }
          });
      std::cout << "final checkpoint: " << final_path << "\n";
      return 0;
    }

    if (factor->parsed()) {
      UInt ab = UInt::from_decimal(factor_n_str);
      FDIF_REQUIRE(ab >= 9, ConfigError, "factor: N must be an odd composite >= 9");
      FDIF_REQUIRE(ab.is_odd(), ConfigError,
                   "factor: N must be odd (the denoiser is trained on odd factors); even N "
                   "factors trivially by 2");
      int n = factor_n_bits > 0 ? factor_n_bits : ab.bit_length() + (ab.bit_length() % 2);
      FDIF_REQUIRE(n % 2 == 0 && ab.bit_length() <= n, ConfigError, "factor: bad --n");
      auto ck = std::make_shared<Checkpoint>(load_checkpoint(factor_model));
      ModelDenoiser den(ck->params, ck->header.model_config);
      SamplerConfig scfg;
      scfg.T = factor_T;
      scfg.gamma = factor_gamma;
      scfg.mode = sampler_mode_from_string(factor_mode);
      scfg.sample_kind = distribution_kind_from_string(factor_kind);
      scfg.replicas = factor_replicas;
      scfg.seed = factor_seed;
      scfg.keep_records = false;
      scfg.validate();
      ReplicatedResult res = factor_replicated(den, scfg, ab, n, factor_threads);
      for (const SampleTrace& tr : res.traces) {
        if (tr.outcome.solved) {
          std::cout << ab.to_decimal() << " = " << tr.outcome.a.to_decimal() << " * "
                    << tr.outcome.b.to_decimal() << "\n"
                    << "solved at step " << tr.outcome.solved_step << "\n";
          return 0;
        }
      }
      report_failure(std::cout, res.traces.front(), ab);
      return 0;  // Unsolved is data, not an error
    }

    if (oracle->parsed()) {
      UInt n = UInt::from_decimal(oracle_n_str);
      FDIF_REQUIRE(n >= 2, ConfigError, "oracle: N must be >= 2");
      if (is_prime(n)) {
        std::cout << n.to_decimal() << " is prime\n";
        return 0;
      }
      if (n < 4) {
        std::cout << n.to_decimal() << " = " << n.to_decimal() << "\n";
        return 0;
      }
      std::optional<UInt> d;
      for (uint64_t s = oracle_seed; !d && s < oracle_seed + 64; ++s) d = pollard_rho(n, s);
      FDIF_REQUIRE(d.has_value(), Error, "oracle: no factor found within the retry budget");
      UInt lo = *d, hi = n / *d;
      if (hi < lo) std::swap(lo, hi);
      std::cout << n.to_decimal() << " = " << lo.to_decimal() << " * " << hi.to_decimal() << "\n";
      return 0;
    }

    if (gc->parsed()) {
      auto results = run_gradcheck_suite({}, &std::cout);
      return all_passed(results) ? 0 : 1;
    }

    if (gen->parsed()) {
      UIntSet excluded;
      if (!gen_train_manifest.empty()) {
        excluded = training_multiplicands(DatasetManifest::load(gen_train_manifest));
      }
      std::vector<int64_t> counts(gen_ns.size(), gen_count);
      auto [pairs, manifest] = gen_test_set(gen_ns, counts, gen_seed, excluded);
      manifest.save(gen_out);
      std::cout << "wrote " << pairs.size() << " pairs to " << gen_out << "\n";
      return 0;
    }

    if (eval->parsed()) {
      auto ck = std::make_shared<Checkpoint>(load_checkpoint(eval_model));
      DenoiserFactory f = model_denoiser_factory(ck);
      std::vector<FactorPair> pairs;
      if (!eval_testset.empty()) {
        pairs = test_pairs_from_manifest(DatasetManifest::load(eval_testset));
      } else {
        for (int n : eval_ns) {
          for (int j = 0; j < eval_examples; ++j) {
            Rng rng(eval_seed, {0x65786d70ULL, uint64_t(n), uint64_t(j)});
            pairs.push_back(gen_test_pair(n, {}, rng));
          }
        }
      }
      std::vector<SampleTrace> traces(pairs.size());
      SamplerConfig scfg;
      scfg.T = eval_T;
      scfg.gamma = eval_gamma;
      scfg.mode = sampler_mode_from_string(eval_mode);
      scfg.sample_kind = distribution_kind_from_string(eval_kind);
      scfg.keep_records = false;
      parallel_for(effective_threads(eval_threads), int64_t(pairs.size()), [&](int64_t j) {
        auto den = f(pairs[size_t(j)]);
        Rng rng(eval_seed, {0x736f6c76ULL, uint64_t(pairs[size_t(j)].n), uint64_t(j)});
        traces[size_t(j)] = run_sampler(*den, scfg, pairs[size_t(j)].ab, pairs[size_t(j)].n, rng);
      });
      int solved = 0;
      double mean_step = 0.0;
      for (size_t j = 0; j < traces.size(); ++j) {
        if (traces[j].outcome.solved) {
          ++solved;
          mean_step += traces[j].outcome.solved_step;
        } else {
          report_failure(std::cout, traces[j], pairs[j].ab);
        }
      }
      std::cout << "solved " << solved << "/" << pairs.size() << " within " << eval_T << " steps";
      if (solved > 0) std::cout << ", mean solve step " << mean_step / solved;
      std::cout << "\n";
      if (!eval_out.empty()) {
        std::ofstream csv(eval_out, std::ios::trunc);
        FDIF_REQUIRE(csv.good(), Error, "cannot open " + eval_out);
        csv << "# fdif eval seed=" << eval_seed << " checkpoint_digest=" << file_digest(eval_model)
            << "\n";
        csv << "n,ab,solved,solved_step,final_a,final_b,bit_dist\n";
        for (size_t j = 0; j < traces.size(); ++j) {
          const auto& o = traces[j].outcome;
          csv << pairs[j].n << ',' << pairs[j].ab.to_decimal() << ',' << (o.solved ? 1 : 0) << ','
              << (o.solved ? std::to_string(o.solved_step) : "NA") << ',' << o.a.to_decimal()
              << ',' << o.b.to_decimal() << ',' << bit_distance(o.a * o.b, pairs[j].ab) << '\n';
        }
      }
      return 0;
    }

    for (const ExpCli& e : exps) {
      if (!e.cmd->parsed()) continue;
      ExperimentSpec spec = spec_from_cli(e.spec_path, e.kind, e.models, e.ns, e.examples, e.T,
                                          e.seed, e.out, e.mode, e.kind_s, e.repeats, e.budgets,
                                          e.threads);
      switch (e.kind) {
        case ExperimentKind::noise_curve: run_noise_curve(spec); break;
        case ExperimentKind::per_bit_curve: run_per_bit_curve(spec); break;
        case ExperimentKind::steps_to_solve: run_steps_to_solve(spec); break;
        case ExperimentKind::replicated: run_replicated(spec); break;
        case ExperimentKind::sweep: run_sweep(spec); break;
        default: break;
      }
      return 0;
    }

    if (ablate->parsed()) {
      ExperimentKind kind = (ab_what == "distribution") ? ExperimentKind::ablate_distribution
                                                        : ExperimentKind::ablate_sampling;
      if (ab_what != "sampling" && ab_what != "distribution") {
        std::cerr << "ablate: what must be sampling|distribution\n";
        return 2;
      }
      ExperimentSpec spec = spec_from_cli(ab_spec, kind, ab_models, ab_ns, ab_examples, ab_T,
                                          ab_seed, ab_out, ab_mode, ab_kind, ab_repeats, {},
                                          ab_threads);
      run_ablations(spec);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace fdif
