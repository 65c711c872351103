#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fdif/harness.hpp"

using namespace fdif;

namespace {

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream f(path);
  REQUIRE(f.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) lines.push_back(line);
  return lines;
}

DenoiserFactory perfect_factory() {
  return [](const FactorPair& p) -> std::unique_ptr<Denoiser> {
    return std::make_unique<PerfectOracleDenoiser>(p);
  };
}

int cli(std::initializer_list<const char*> args) {
  std::vector<const char*> argv = {"fdif"};
  argv.insert(argv.end(), args);
  return run_cli(int(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("noise curve with the perfect oracle: model at 1.0, baseline on the diagonal") {
  auto pts = noise_curve_points(perfect_factory(), 16, 128, DistributionKind::categorical, 3, 2);
  REQUIRE(pts.size() == 21);
  for (const auto& p : pts) {
    CHECK(p.bit_accuracy == 1.0);
    // Baseline expectation 1 - noise/2; 3-sigma band over 128*16 positions.
    const double expect = 1.0 - p.noise_level / 2.0;
    const double sigma = std::sqrt(std::max(expect * (1 - expect), 1e-9) / (128.0 * 16.0));
    CHECK(std::abs(p.rounding_baseline - expect) < 3 * sigma + 1e-9);
  }
  CHECK(pts.front().noise_level == 0.0);
  CHECK(pts.back().noise_level == doctest::Approx(1.0));
  CHECK(pts.front().rounding_baseline == 1.0);
}

TEST_CASE("per-bit curve with an oracle that only knows the lowest bits") {
  // Denoiser that outputs bit 0 of each half correctly and garbage elsewhere;
  // the per-bit resolution must see exactly that.
  struct LowBitOracle final : Denoiser {
    ProbSeq predict(const ProbSeq& x, double, const ConditionSeq&) const override {
      ProbSeq out(x.n, 2);
      for (int i = 0; i < x.n; ++i) {
        const bool low = (i == 0 || i == x.n / 2);
        out.at(i, low ? 1 : 0) = 1.0;  // odd factors: bit 0 is always 1
      }
      return out;
    }
  };
  DenoiserFactory f = [](const FactorPair&) -> std::unique_ptr<Denoiser> {
    return std::make_unique<LowBitOracle>();
  };
  auto pts = per_bit_points(f, 16, 64, DistributionKind::categorical, 5, 2);
  REQUIRE(pts.size() == 21u * 16u);
  for (const auto& p : pts) {
    if (p.bit_index == 0 || p.bit_index == 8) {
      CHECK(p.accuracy == 1.0);  // odd numbers: lsb always correct
    }
  }
}

TEST_CASE("steps CSV: schema, stanza, and perfect-oracle values") {
  namespace fs = std::filesystem;
  ExperimentSpec spec;
  spec.kind = ExperimentKind::steps_to_solve;
  spec.n_values = {16};
  spec.examples = 16;
  spec.T = 8;
  spec.repeats = 3;
  spec.seed = 9;
  spec.threads = 2;
  spec.out_path = "steps_test.csv";
  run_steps_to_solve(spec, perfect_factory());

  auto lines = read_lines(spec.out_path);
  REQUIRE(lines.size() >= 4);
  CHECK(lines[0].rfind("# fdif experiment kind=steps_to_solve", 0) == 0);
  CHECK(lines[1].find("seed=9") != std::string::npos);
  CHECK(lines[1].find("config_digest=") != std::string::npos);
  CHECK(lines[1].find("checkpoint_digest=none") != std::string::npos);
  CHECK(lines[2].rfind("# config=", 0) == 0);
  CHECK(lines[3] == "n,fraction,steps_mean,steps_std,reached_repeats,repeats");
  // Perfect oracle: every fraction reached at step 1 with zero deviation.
  for (size_t i = 4; i < lines.size(); ++i) {
    std::stringstream ss(lines[i]);
    std::string n, frac, mean, stddev, reached, repeats;
    std::getline(ss, n, ',');
    std::getline(ss, frac, ',');
    std::getline(ss, mean, ',');
    std::getline(ss, stddev, ',');
    std::getline(ss, reached, ',');
    std::getline(ss, repeats, ',');
    CHECK(n == "16");
    CHECK(std::stod(mean) == 1.0);
    CHECK(std::stod(stddev) == 0.0);
    CHECK(reached == "3");
    CHECK(repeats == "3");
  }
  std::remove(spec.out_path.c_str());
}

TEST_CASE("replicated curves lie at or below the distinct-instance story for the min fraction") {
  ExperimentSpec spec;
  spec.kind = ExperimentKind::replicated;
  spec.n_values = {16};
  spec.examples = 8;
  spec.T = 4;
  spec.repeats = 2;
  spec.seed = 10;
  spec.threads = 2;
  spec.out_path = "replicated_test.csv";
  run_replicated(spec, perfect_factory());
  auto lines = read_lines(spec.out_path);
  CHECK(lines[3] == "n,fraction,steps_mean,steps_std,reached_repeats,repeats");
  CHECK(lines.size() == 4 + 3 * 1);  // three fractions, one n
  std::remove(spec.out_path.c_str());
}

TEST_CASE("sweep: success rate is non-decreasing in the step budget") {
  ExperimentSpec spec;
  spec.kind = ExperimentKind::sweep;
  spec.n_values = {16};
  spec.examples = 12;
  spec.step_budgets = {1, 2, 4, 8};
  spec.seed = 11;
  spec.threads = 2;
  spec.out_path = "sweep_test.csv";
  // Epsilon-flip oracle: solves arrive over time, cumulative by construction.
  DenoiserFactory f = [](const FactorPair& p) -> std::unique_ptr<Denoiser> {
    return std::make_unique<EpsilonFlipDenoiser>(p, 0.08, 1234);
  };
  run_sweep(spec, f);
  auto lines = read_lines(spec.out_path);
  CHECK(lines[3] == "train_steps,diffusion_steps,success_rate");
  double prev = -1.0;
  for (size_t i = 4; i < lines.size(); ++i) {
    std::stringstream ss(lines[i]);
    std::string ts, ds, sr;
    std::getline(ss, ts, ',');
    std::getline(ss, ds, ',');
    std::getline(ss, sr, ',');
    const double rate = std::stod(sr);
    CHECK(rate >= prev);
    prev = rate;
  }
  std::remove(spec.out_path.c_str());
}

TEST_CASE("sampling ablation harness sanity: both modes solve at step 1 with a perfect oracle") {
  ExperimentSpec spec;
  spec.kind = ExperimentKind::ablate_sampling;
  spec.n_values = {16};
  spec.examples = 8;
  spec.T = 4;
  spec.repeats = 2;
  spec.seed = 12;
  spec.threads = 2;
  spec.out_path = "ablate_test.csv";
  run_ablations(spec, perfect_factory());
  auto lines = read_lines(spec.out_path);
  CHECK(lines[3] == "mode,n,steps_mean,steps_std,reached_repeats,repeats");
  REQUIRE(lines.size() == 4 + 2);
  for (size_t i = 4; i < lines.size(); ++i) {
    std::stringstream ss(lines[i]);
    std::string mode, n, mean;
    std::getline(ss, mode, ',');
    std::getline(ss, n, ',');
    std::getline(ss, mean, ',');
    CHECK(std::stod(mean) == 1.0);
  }
  std::remove(spec.out_path.c_str());
}

TEST_CASE("distribution ablation CSV schema with oracle factories") {
  ExperimentSpec spec;
  spec.kind = ExperimentKind::ablate_distribution;
  spec.n_values = {16};
  spec.examples = 8;
  spec.T = 2;
  spec.repeats = 3;
  spec.seed = 13;
  spec.threads = 2;
  spec.out_path = "ablate_dist_test.csv";
  run_ablations(spec, perfect_factory());
  auto lines = read_lines(spec.out_path);
  CHECK(lines[3] == "variant,n,trial,success_rate");
  REQUIRE(lines.size() == 4 + 2 * 3);
  CHECK(lines[4].rfind("relaxed,", 0) == 0);
  CHECK(lines[7].rfind("categorical,", 0) == 0);
  std::remove(spec.out_path.c_str());
}

TEST_CASE("ExperimentSpec JSON round-trip") {
  ExperimentSpec a;
  a.kind = ExperimentKind::sweep;
  a.model_paths = {"x.fdif", "y.fdif"};
  a.n_values = {8, 16};
  a.step_budgets = {1, 4, 16};
  a.seed = 77;
  ExperimentSpec b = ExperimentSpec::from_json(a.to_json());
  CHECK(b.kind == ExperimentKind::sweep);
  CHECK(b.model_paths == a.model_paths);
  CHECK(b.n_values == a.n_values);
  CHECK(b.step_budgets == a.step_budgets);
  CHECK(b.seed == 77);
  CHECK(a.digest() == b.digest());
}

TEST_CASE("CLI: oracle subcommand factors the walk-through numbers") {
  CHECK(cli({"oracle", "143"}) == 0);
  CHECK(cli({"oracle", "3776028761"}) == 0);
  CHECK(cli({"oracle", "17"}) == 0);  // prime input is an answer, not an error
}

TEST_CASE("CLI: exit code 2 on usage errors") {
  CHECK(cli({"no-such-command"}) == 2);
  CHECK(cli({}) == 2);
  CHECK(cli({"factor"}) == 2);            // missing required N and --model
  CHECK(cli({"ablate", "nonsense"}) == 2);
}

TEST_CASE("CLI: exit code 1 on runtime failures") {
  CHECK(cli({"factor", "143", "--model", "does_not_exist.fdif"}) == 1);
}

TEST_CASE("CLI: gen-testset writes a loadable manifest") {
  CHECK(cli({"gen-testset", "--n", "16", "--count", "5", "--seed", "3", "--out",
             "cli_testset.json"}) == 0);
  DatasetManifest m = DatasetManifest::load("cli_testset.json");
  CHECK(m.is_test());
  auto pairs = test_pairs_from_manifest(m);
  CHECK(pairs.size() == 5);
  for (const auto& p : pairs) {
    CHECK(is_prime(p.a));
    CHECK(is_prime(p.b));
  }
  std::remove("cli_testset.json");
}

TEST_CASE("file digest is stable and content-sensitive") {
  {
    std::ofstream f("digest_a.bin", std::ios::binary);
    f << "hello";
  }
  {
    std::ofstream f("digest_b.bin", std::ios::binary);
    f << "hellp";
  }
  CHECK(file_digest("digest_a.bin") == file_digest("digest_a.bin"));
  CHECK(file_digest("digest_a.bin") != file_digest("digest_b.bin"));
  std::remove("digest_a.bin");
  std::remove("digest_b.bin");
}
