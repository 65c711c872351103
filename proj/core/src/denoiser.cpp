#include "fdif/denoiser.hpp"

#include <bit>
#include <cmath>

#include <nlohmann/json.hpp>

namespace fdif {

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["m"] = m;
  j["h"] = h;
  j["dropout_rate"] = dropout_rate;
  j["k"] = k;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig c;
  c.m = j.at("m").get<int>();
  c.h = j.at("h").get<int>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.k = j.at("k").get<int>();
  return c;
}

DenoiserParams::DenoiserParams(const ModelConfig& cfg)
    : in_proj_w1("in_proj_w1", {5, cfg.m}),
      in_proj_b1("in_proj_b1", {cfg.m}),
      in_proj_w2("in_proj_w2", {cfg.m, cfg.m}),
      in_proj_b2("in_proj_b2", {cfg.m}),
      conv_w("conv_w", {3 * cfg.m, cfg.h, 3}),
      conv_b("conv_b", {cfg.h}),
      lin_w("lin_w", {cfg.h, cfg.m}),
      lin_b("lin_b", {cfg.m}),
      gate_s("gate_s", {cfg.m}),
      gate_z("gate_z", {cfg.m}),
      out_w("out_w", {cfg.m, cfg.k}),
      out_b("out_b", {cfg.k}) {
  int id = 0;
  for (Parameter* p : all()) p->id = id++;
}

std::vector<Parameter*> DenoiserParams::all() {
  return {&in_proj_w1, &in_proj_b1, &in_proj_w2, &in_proj_b2, &conv_w, &conv_b,
          &lin_w,      &lin_b,      &gate_s,     &gate_z,     &out_w,  &out_b};
}

std::vector<const Parameter*> DenoiserParams::all() const {
  auto* self = const_cast<DenoiserParams*>(this);
  std::vector<const Parameter*> out;
  for (Parameter* p : self->all()) out.push_back(p);
  return out;
}

int64_t DenoiserParams::param_count() const {
  int64_t total = 0;
  for (const Parameter* p : all()) total += p->size();
  return total;
}

void DenoiserParams::zero_grads() {
  for (Parameter* p : all()) p->zero_grad();
}

int64_t closed_form_param_count(const ModelConfig& cfg) {
  const int64_t m = cfg.m, h = cfg.h, k = cfg.k;
  return (5 * m + m) + (m * m + m) + (3 * m * h * 3 + h) + (h * m + m) + 2 * m + (m * k + k);
}

namespace {
void fill_uniform_fan_in(Parameter& p, int fan_in, Rng& rng) {
  const double limit = std::sqrt(3.0 / double(fan_in));
  for (double& v : p.value) v = rng.uniform(-limit, limit);
}
}  // namespace

DenoiserParams init_params(const ModelConfig& cfg, Rng& rng) {
  FDIF_REQUIRE(cfg.m >= 4, ConfigError, "ModelConfig: m must be >= 4");
  DenoiserParams p(cfg);
  fill_uniform_fan_in(p.in_proj_w1, 5, rng);
  fill_uniform_fan_in(p.in_proj_w2, cfg.m, rng);
  fill_uniform_fan_in(p.conv_w, 3 * cfg.m * 3, rng);
  fill_uniform_fan_in(p.lin_w, cfg.h, rng);
  fill_uniform_fan_in(p.out_w, cfg.m, rng);
  const double s_init = std::log(0.95 / 0.05);  // sigma(s) = 0.95
  for (double& v : p.gate_s.value) v = s_init;
  // gate_z stays zero: the candidate branch is silent until trained.
  return p;
}

int recurrence_depth(int n) {
  FDIF_REQUIRE(n >= 2, Error, "recurrence_depth: n must be >= 2");
  const int ceil_log2 = std::bit_width(unsigned(n - 1));
  return std::max(n / 2, 4 * ceil_log2);
}

Tape::Id csu_step(Tape& tape, Tape::Id s_r, DenoiserParams& params, const ModelConfig& cfg,
                  RunMode mode, uint64_t mask_seed) {
  Tape::Id s_drop = tape.dropout(s_r, cfg.dropout_rate, mode == RunMode::train, mask_seed);
  Tape::Id s_f = tape.forward_shuffle(s_drop);
  Tape::Id s_rev = tape.reverse_shuffle(s_drop);
  Tape::Id cat = tape.concat_channels({s_drop, s_f, s_rev});
  Tape::Id g = tape.gelu(tape.instance_norm(tape.conv1d(cat, params.conv_w, params.conv_b)));
  Tape::Id c = tape.linear(g, params.lin_w, params.lin_b);
  Tape::Id gate_in = tape.scale_channels(s_r, tape.sigmoid(tape.param_vector(params.gate_s)));
  Tape::Id gate_cand = tape.scale_channels(c, tape.param_vector(params.gate_z));
  return tape.add(gate_in, gate_cand);
}

Tape::Id denoiser_forward(Tape& tape, const ProbSeq& x_in, double alpha_bar,
                          const ConditionSeq& cond, DenoiserParams& params, const ModelConfig& cfg,
                          RunMode mode, uint64_t mask_seed) {
  FDIF_REQUIRE(x_in.n == cond.n, ShapeError, "denoiser_forward: x and ab length mismatch");
  FDIF_REQUIRE(x_in.k == 2, ShapeError, "denoiser_forward: x must have k=2");
  FDIF_REQUIRE(alpha_bar >= 0.0 && alpha_bar <= 1.0, Error, "denoiser_forward: alpha_bar in [0,1]");
  const int n = x_in.n;
  // Per position: [x (2) | ab one-hot (2) | alpha_bar replicated].
  std::vector<double> in(size_t(n) * 5);
  for (int i = 0; i < n; ++i) {
    in[size_t(i) * 5 + 0] = x_in.at(i, 0);
    in[size_t(i) * 5 + 1] = x_in.at(i, 1);
    in[size_t(i) * 5 + 2] = cond.onehot(i, 0);
    in[size_t(i) * 5 + 3] = cond.onehot(i, 1);
    in[size_t(i) * 5 + 4] = alpha_bar;
  }
  Tape::Id x = tape.constant(n, 5, in.data());
  Tape::Id s = tape.linear(tape.gelu(tape.linear(x, params.in_proj_w1, params.in_proj_b1)),
                           params.in_proj_w2, params.in_proj_b2);
  const int depth = recurrence_depth(n);
  for (int r = 0; r < depth; ++r) {
    s = csu_step(tape, s, params, cfg, mode, derive_seed(mask_seed, {uint64_t(r)}));
  }
  return tape.softmax_rows(tape.linear(s, params.out_w, params.out_b));
}

ProbSeq ModelDenoiser::predict(const ProbSeq& x_in, double alpha_bar,
                               const ConditionSeq& cond) const {
  Tape tape;
  auto* params = const_cast<DenoiserParams*>(params_);
  Tape::Id out = denoiser_forward(tape, x_in, alpha_bar, cond, *params, cfg_, RunMode::infer);
  return tape.as_probseq(out);
}

}  // namespace fdif
