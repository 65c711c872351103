#include "fdif/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <unistd.h>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fdif/parallel.hpp"

namespace fdif {

namespace {
constexpr uint64_t kPairStream = 0x70616972ULL;   // batch example selection
constexpr uint64_t kNoiseStream = 0x6e6f6973ULL;  // alpha_bar + q_sample draws
constexpr uint64_t kDropStream = 0x64726f70ULL;   // dropout masks

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}
}  // namespace

std::string TrainConfig::to_json() const {
  nlohmann::json j;
  j["n_list"] = n_list;
  j["batch_size"] = batch_size;
  j["total_steps"] = total_steps;
  j["learning_rate"] = learning_rate;
  j["warmup_steps"] = warmup_steps;
  j["t_train"] = t_train;
  j["dataset_size"] = dataset_size;
  j["seed"] = seed;
  j["distribution_kind"] = to_string(distribution_kind);
  j["val_size"] = val_size;
  j["val_every"] = val_every;
  j["val_seed"] = val_seed;
  j["threads"] = threads;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  TrainConfig c;
  c.n_list = j.at("n_list").get<std::vector<int>>();
  c.batch_size = j.at("batch_size").get<int>();
  c.total_steps = j.at("total_steps").get<int64_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.warmup_steps = j.at("warmup_steps").get<int>();
  c.t_train = j.at("t_train").get<int>();
  c.dataset_size = j.at("dataset_size").get<int64_t>();
  c.seed = j.at("seed").get<uint64_t>();
  c.distribution_kind = distribution_kind_from_string(j.at("distribution_kind").get<std::string>());
  if (j.contains("val_size")) c.val_size = j.at("val_size").get<int64_t>();
  if (j.contains("val_every")) c.val_every = j.at("val_every").get<int64_t>();
  if (j.contains("val_seed")) c.val_seed = j.at("val_seed").get<uint64_t>();
  if (j.contains("threads")) c.threads = j.at("threads").get<int>();
  return c;
}

std::string TrainConfig::digest() const {
  nlohmann::json j;  // only fields that change the trained result
  j["n_list"] = n_list;
  j["batch_size"] = batch_size;
  j["total_steps"] = total_steps;
  j["learning_rate"] = learning_rate;
  j["warmup_steps"] = warmup_steps;
  j["t_train"] = t_train;
  j["dataset_size"] = dataset_size;
  j["seed"] = seed;
  j["distribution_kind"] = to_string(distribution_kind);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)fnv1a(j.dump()));
  return buf;
}

void TrainConfig::validate() const {
  FDIF_REQUIRE(!n_list.empty(), ConfigError, "TrainConfig: n_list empty");
  for (int n : n_list) FDIF_REQUIRE(n >= 4 && n % 2 == 0, ConfigError, "TrainConfig: n must be even");
  FDIF_REQUIRE(batch_size >= 1, ConfigError, "TrainConfig: batch_size >= 1");
  FDIF_REQUIRE(dataset_size >= batch_size, ConfigError, "TrainConfig: dataset_size >= batch_size");
  FDIF_REQUIRE(t_train >= 1, ConfigError, "TrainConfig: t_train >= 1");
}

OptimizerState OptimizerState::for_params(const std::vector<Parameter*>& params) {
  OptimizerState st;
  st.m.resize(params.size());
  st.s.resize(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    st.m[i].assign(size_t(params[i]->size()), 0.0);
    st.s[i].assign(size_t(params[i]->size()), 0.0);
  }
  return st;
}

void adabelief_update(std::vector<double>& value, const std::vector<double>& grad,
                      std::vector<double>& m, std::vector<double>& s, const AdaBeliefConfig& cfg,
                      int64_t step) {
  FDIF_REQUIRE(value.size() == grad.size() && value.size() == m.size() && value.size() == s.size(),
               ShapeError, "adabelief_update: shape mismatch");
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(step));
  for (size_t i = 0; i < value.size(); ++i) {
    const double g = grad[i];
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    const double diff = g - m[i];
    s[i] = cfg.beta2 * s[i] + (1.0 - cfg.beta2) * diff * diff + cfg.epsilon;
    const double m_corr = m[i] / bc1;
    const double s_corr = s[i] / bc2;
    value[i] -= cfg.lr * m_corr / (std::sqrt(s_corr) + cfg.epsilon);
  }
}

Batch make_batch(int n, int batch_size, const TrainConfig& cfg, int64_t step) {
  Batch b;
  b.n = n;
  b.pairs.reserve(size_t(batch_size));
  DiffusionConfig dcfg;
  dcfg.kind = cfg.distribution_kind;
  for (int j = 0; j < batch_size; ++j) {
    const uint64_t index = uint64_t((step * batch_size + j) % cfg.dataset_size);
    FactorPair p = training_pair_at(cfg.seed, n, index);
    Rng noise_rng(cfg.seed, {kNoiseStream, uint64_t(n), uint64_t(step), uint64_t(j)});
    const double alpha_bar = noise_rng.uniform01();
    NoiseLevel lvl = level_from_alpha_bar(alpha_bar, cfg.t_train);
    ProbSeq x0 = encode_pair(p);
    b.x_t.push_back(q_sample(x0, alpha_bar, dcfg, noise_rng));
    b.x0.push_back(std::move(x0));
    b.conds.push_back(encode_product(p.ab, n));
    b.levels.push_back(lvl);
    b.pairs.push_back(p);
  }
  return b;
}

Trainer::Trainer(ModelConfig model_cfg, TrainConfig train_cfg)
    : model_cfg_(model_cfg),
      train_cfg_(std::move(train_cfg)),
      params_([&] {
        train_cfg_.validate();
        Rng rng(train_cfg_.seed, {0x696e6974ULL});
        return init_params(model_cfg_, rng);
      }()),
      opt_(OptimizerState::for_params(params_.all())) {}

double Trainer::example_loss_and_grads(const Batch& batch, size_t idx, GradSink* sink,
                                       int64_t step, int /*length_index*/) {
  Tape tape(sink);
  const uint64_t mask_seed =
      derive_seed(train_cfg_.seed, {kDropStream, uint64_t(batch.n), uint64_t(step), uint64_t(idx)});
  Tape::Id out = denoiser_forward(tape, batch.x_t[idx], batch.levels[idx].alpha_bar_t,
                                  batch.conds[idx], params_, model_cfg_, RunMode::train, mask_seed);
  Tape::Id loss = tape.kl_vs_posterior(out, batch.x_t[idx], batch.x0[idx], batch.levels[idx]);
  const double value = tape.scalar(loss);
  if (sink != nullptr) tape.backward(loss, 1.0 / double(batch.pairs.size()));
  return value;
}

StepResult Trainer::train_step() {
  std::vector<Batch> batches;
  batches.reserve(train_cfg_.n_list.size());
  for (int n : train_cfg_.n_list) {
    batches.push_back(make_batch(n, train_cfg_.batch_size, train_cfg_, opt_.step));
  }
  return train_step_on(batches);
}

StepResult Trainer::train_step_on(const std::vector<Batch>& batches) {
  FDIF_REQUIRE(batches.size() == train_cfg_.n_list.size(), ConfigError,
               "train_step_on: need one batch per configured length");
  const int64_t step_idx = opt_.step;  // rng derivations use the pre-update step
  std::vector<Parameter*> params = params_.all();

  struct Slot {
    const Batch* batch;
    size_t idx;
  };
  std::vector<Slot> slots;
  for (const Batch& b : batches) {
    for (size_t j = 0; j < b.pairs.size(); ++j) slots.push_back({&b, j});
  }

  // Per-example gradient buffers, merged in slot order afterwards so the
  // result does not depend on the worker count.
  std::vector<BufferGradSink> sinks(slots.size());
  std::vector<double> losses(slots.size(), 0.0);
  for (auto& s : sinks) s.bind(params);
  parallel_for(effective_threads(train_cfg_.threads), int64_t(slots.size()), [&](int64_t i) {
    losses[size_t(i)] =
        example_loss_and_grads(*slots[size_t(i)].batch, slots[size_t(i)].idx, &sinks[size_t(i)],
                               step_idx, 0);
  });

  StepResult res;
  size_t cursor = 0;
  for (const Batch& b : batches) {
    double acc = 0.0;
    for (size_t j = 0; j < b.pairs.size(); ++j, ++cursor) {
      const double l = losses[cursor];
      if (!std::isfinite(l)) {
        std::ostringstream os;
        os << "non-finite loss at step " << step_idx << ", n=" << b.n << ", example " << j;
        throw NonFiniteLossError(os.str());
      }
      acc += l;
    }
    res.loss_per_length.push_back(acc / double(b.pairs.size()));
    res.total_loss += acc / double(b.pairs.size());
  }

  params_.zero_grads();
  for (const BufferGradSink& sink : sinks) {
    const auto& bufs = sink.buffers();
    for (size_t pi = 0; pi < params.size(); ++pi) {
      double* dst = params[pi]->grad.data();
      const std::vector<double>& src = bufs[pi];
      for (size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
    }
  }

  // Single optimizer update for all length batches together.
  opt_.step += 1;
  AdaBeliefConfig acfg;
  acfg.lr = train_cfg_.learning_rate;
  if (train_cfg_.warmup_steps > 0 && opt_.step <= train_cfg_.warmup_steps) {
    acfg.lr *= double(opt_.step) / double(train_cfg_.warmup_steps);
  }
  for (size_t pi = 0; pi < params.size(); ++pi) {
    adabelief_update(params[pi]->value, params[pi]->grad, opt_.m[pi], opt_.s[pi], acfg, opt_.step);
  }
  return res;
}

double Trainer::validation_loss(int n) {
  DiffusionConfig dcfg;
  dcfg.kind = train_cfg_.distribution_kind;
  const int64_t count = train_cfg_.val_size;
  std::vector<double> losses(size_t(count), 0.0);
  parallel_for(effective_threads(train_cfg_.threads), count, [&](int64_t j) {
    Rng rng(train_cfg_.val_seed, {uint64_t(n), uint64_t(j)});
    FactorPair p = gen_training_pair(n, rng);
    const double alpha_bar = rng.uniform01();
    NoiseLevel lvl = level_from_alpha_bar(alpha_bar, train_cfg_.t_train);
    ProbSeq x0 = encode_pair(p);
    ProbSeq x_t = q_sample(x0, alpha_bar, dcfg, rng);
    Tape tape;
    Tape::Id out = denoiser_forward(tape, x_t, alpha_bar, encode_product(p.ab, n), params_,
                                    model_cfg_, RunMode::infer);
    losses[size_t(j)] = kl_loss(x_t, x0, tape.as_probseq(out), lvl, 2);
  });
  double acc = 0.0;
  for (double l : losses) acc += l;
  return acc / double(count);
}

std::string Trainer::run(const std::string& out_dir, const std::string& log_path,
                         int64_t checkpoint_every,
                         const std::function<void(int64_t, const StepResult&)>& on_step) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::ofstream log(log_path, std::ios::app);
  FDIF_REQUIRE(log.good(), Error, "cannot open training log: " + log_path);
  if (fs::file_size(log_path) == 0) log << "step,n,loss,val_loss,wallclock_s\n";

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  auto ckpt_path = [&](int64_t s) { return out_dir + "/ckpt_" + std::to_string(s) + ".fdif"; };
  auto save = [&](int64_t s) {
    CheckpointHeader h;
    h.model_config = model_cfg_;
    h.train_config_digest = train_cfg_.digest();
    h.step = s;
    save_checkpoint(ckpt_path(s), params_, &opt_, h);
  };

  while (opt_.step < train_cfg_.total_steps) {
    StepResult res = train_step();
    const int64_t s = opt_.step;
    if (on_step) on_step(s, res);
    const bool do_val = (s % train_cfg_.val_every == 0) || s == train_cfg_.total_steps;
    const bool do_log = do_val || (s % 100 == 0) || s == 1;
    if (do_log) {
      for (size_t i = 0; i < train_cfg_.n_list.size(); ++i) {
        log << s << ',' << train_cfg_.n_list[i] << ',' << res.loss_per_length[i] << ',';
        if (do_val) log << validation_loss(train_cfg_.n_list[i]);
        log << ',' << elapsed() << '\n';
      }
      log.flush();
    }
    if (s % checkpoint_every == 0 || s == train_cfg_.total_steps) save(s);
  }
  if (!fs::exists(ckpt_path(train_cfg_.total_steps))) save(train_cfg_.total_steps);
  return ckpt_path(train_cfg_.total_steps);
}

// ---------------- checkpoint i/o ----------------

namespace {

void put_u16(std::string& out, uint16_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
}
void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_array(std::string& out, const std::string& name, const std::vector<int>& dims,
               const std::vector<double>& data) {
  FDIF_REQUIRE(name.size() < 65536, Error, "checkpoint: name too long");
  put_u16(out, uint16_t(name.size()));
  out.append(name);
  out.push_back(char(uint8_t(dims.size())));
  int64_t total = 1;
  for (int d : dims) {
    put_u32(out, uint32_t(d));
    total *= d;
  }
  FDIF_REQUIRE(total == int64_t(data.size()), ShapeError, "checkpoint: dims/data mismatch");
  size_t off = out.size();
  out.resize(off + data.size() * sizeof(double));
  std::memcpy(out.data() + off, data.data(), data.size() * sizeof(double));
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t k) const {
    FDIF_REQUIRE(pos + k <= buf.size(), TruncatedFileError, "checkpoint: truncated file");
  }
  uint16_t u16() {
    need(2);
    uint16_t v = uint16_t(uint8_t(buf[pos])) | (uint16_t(uint8_t(buf[pos + 1])) << 8);
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::string bytes(size_t k) {
    need(k);
    std::string s = buf.substr(pos, k);
    pos += k;
    return s;
  }
  uint8_t u8() {
    need(1);
    return uint8_t(buf[pos++]);
  }
  bool done() const { return pos == buf.size(); }
};

struct RawArray {
  std::vector<int> dims;
  std::vector<double> data;
};

}  // namespace

void save_checkpoint(const std::string& path, const DenoiserParams& params,
                     const OptimizerState* opt, const CheckpointHeader& header) {
  std::string out;
  out.append(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  nlohmann::json hj;
  hj["model_config"] = nlohmann::json::parse(header.model_config.to_json());
  hj["train_config_digest"] = header.train_config_digest;
  hj["step"] = header.step;
  const std::string hstr = hj.dump();
  put_u32(out, uint32_t(hstr.size()));
  out.append(hstr);

  auto ps = params.all();
  for (const Parameter* p : ps) put_array(out, p->name, p->shape, p->value);
  if (opt != nullptr) {
    for (size_t i = 0; i < ps.size(); ++i) {
      put_array(out, "opt.m." + ps[i]->name, ps[i]->shape, opt->m[i]);
      put_array(out, "opt.s." + ps[i]->name, ps[i]->shape, opt->s[i]);
    }
  }

  // Unique tmp name: concurrent writers of the same deterministic artifact
  // must not interleave within one file.
  const std::string tmp = path + ".tmp." + std::to_string(uint64_t(::getpid()));
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    FDIF_REQUIRE(f.good(), Error, "checkpoint: cannot open for write: " + tmp);
    f.write(out.data(), std::streamsize(out.size()));
    FDIF_REQUIRE(f.good(), Error, "checkpoint: write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

namespace {

struct ParsedCheckpoint {
  CheckpointHeader header;
  std::vector<std::pair<std::string, RawArray>> arrays;

  const RawArray* find(const std::string& name) const {
    for (const auto& [n, a] : arrays) {
      if (n == name) return &a;
    }
    return nullptr;
  }
};

ParsedCheckpoint parse_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  FDIF_REQUIRE(f.good(), Error, "checkpoint: cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string buf = ss.str();

  Reader r{buf};
  const std::string magic = r.bytes(4);
  FDIF_REQUIRE(std::memcmp(magic.data(), kCheckpointMagic, 4) == 0, BadMagicError,
               "checkpoint: bad magic");
  const uint32_t version = r.u32();
  FDIF_REQUIRE(version == kCheckpointVersion, VersionMismatchError,
               "checkpoint: unsupported version " + std::to_string(version));
  const uint32_t hlen = r.u32();
  nlohmann::json hj;
  try {
    hj = nlohmann::json::parse(r.bytes(hlen));
  } catch (const nlohmann::json::parse_error&) {
    throw TruncatedFileError("checkpoint: malformed header JSON");
  }
  ParsedCheckpoint pc;
  pc.header.model_config = ModelConfig::from_json(hj.at("model_config").dump());
  pc.header.train_config_digest = hj.at("train_config_digest").get<std::string>();
  pc.header.step = hj.at("step").get<int64_t>();

  while (!r.done()) {
    const uint16_t nlen = r.u16();
    const std::string name = r.bytes(nlen);
    const uint8_t rank = r.u8();
    RawArray arr;
    int64_t total = 1;
    for (int i = 0; i < rank; ++i) {
      arr.dims.push_back(int(r.u32()));
      total *= arr.dims.back();
    }
    r.need(size_t(total) * sizeof(double));
    arr.data.resize(size_t(total));
    std::memcpy(arr.data.data(), buf.data() + r.pos, size_t(total) * sizeof(double));
    r.pos += size_t(total) * sizeof(double);
    pc.arrays.emplace_back(name, std::move(arr));
  }
  return pc;
}

void fill_params_from(const ParsedCheckpoint& pc, DenoiserParams& params, OptimizerState* opt) {
  auto ps = params.all();
  // Validate everything before mutating anything.
  for (const Parameter* p : ps) {
    const RawArray* a = pc.find(p->name);
    FDIF_REQUIRE(a != nullptr, TruncatedFileError, "checkpoint: missing array " + p->name);
    FDIF_REQUIRE(a->dims == p->shape, ShapeMismatchError,
                 "checkpoint: shape mismatch for " + p->name);
  }
  bool has_opt = true;
  for (const Parameter* p : ps) {
    if (pc.find("opt.m." + p->name) == nullptr || pc.find("opt.s." + p->name) == nullptr) {
      has_opt = false;
      break;
    }
  }
  if (opt != nullptr && has_opt) {
    for (const Parameter* p : ps) {
      FDIF_REQUIRE(pc.find("opt.m." + p->name)->dims == p->shape, ShapeMismatchError,
                   "checkpoint: optimizer shape mismatch for " + p->name);
      FDIF_REQUIRE(pc.find("opt.s." + p->name)->dims == p->shape, ShapeMismatchError,
                   "checkpoint: optimizer shape mismatch for " + p->name);
    }
  }
  for (Parameter* p : ps) p->value = pc.find(p->name)->data;
  if (opt != nullptr) {
    *opt = OptimizerState::for_params(ps);
    opt->step = pc.header.step;
    if (has_opt) {
      for (size_t i = 0; i < ps.size(); ++i) {
        opt->m[i] = pc.find("opt.m." + ps[i]->name)->data;
        opt->s[i] = pc.find("opt.s." + ps[i]->name)->data;
      }
    }
  }
}

}  // namespace

Checkpoint load_checkpoint(const std::string& path) {
  ParsedCheckpoint pc = parse_checkpoint(path);
  Checkpoint ck(pc.header.model_config);
  ck.header = pc.header;
  bool has_opt = pc.find("opt.m." + ck.params.all()[0]->name) != nullptr;
  if (has_opt) {
    OptimizerState opt;
    fill_params_from(pc, ck.params, &opt);
    ck.opt = std::move(opt);
  } else {
    fill_params_from(pc, ck.params, nullptr);
  }
  return ck;
}

CheckpointHeader load_checkpoint_into(const std::string& path, DenoiserParams& params,
                                      OptimizerState* opt) {
  ParsedCheckpoint pc = parse_checkpoint(path);
  fill_params_from(pc, params, opt);
  return pc.header;
}

}  // namespace fdif
