// SPDX-License-Identifier: Apache-2.0
#include "mlva/trainer.hpp"

#include <bit>
#include <chrono>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace mlva {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoints are written in native byte order, which must be little-endian");

constexpr char kCheckpointMagic[4] = {'M', 'L', 'V', 'C'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  }
  return v;
}

void write_string(std::ostream& os, const std::string& s) {
  write_pod(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is, const char* what) {
  const auto len = read_pod<std::uint32_t>(is, what);
  if (len > (1u << 24)) throw CheckpointError(std::string("checkpoint: implausible length for ") + what);
  std::string s(len, '\0');
  if (!is.read(s.data(), len)) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  return s;
}

void write_floats(std::ostream& os, const Matrix<float>& m) {
  os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
}

void read_floats(std::istream& is, Matrix<float>& m, const std::string& what) {
  if (!is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)))) {
    throw CheckpointError("checkpoint truncated in payload of " + what);
  }
}

}  // namespace

void TrainConfig::validate() const {
  align.validate();
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (align.lambda1 > 0 && batch_size < 2) {
    throw ConfigError("batch_size must be at least 2 when lambda1 > 0");
  }
  if (!(optim.lr > 0)) throw ConfigError("lr must be positive");
  if (!(optim.beta1 >= 0 && optim.beta1 < 1) || !(optim.beta2 >= 0 && optim.beta2 < 1)) {
    throw ConfigError("betas must lie in [0, 1)");
  }
  if (!(optim.weight_decay >= 0)) throw ConfigError("weight_decay must be non-negative");
  if (!(optim.eps > 0)) throw ConfigError("eps must be positive");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
  if (!(clip_norm >= 0)) throw ConfigError("clip_norm must be non-negative");
  if (dims.vocab_size < 2 || dims.embed_dim < 1 || dims.hidden < 1 || dims.static_dim < 0 ||
      dims.motion_dim < 0 || dims.frame_dim() < 1 || dims.max_frames < 1 || dims.max_tokens < 1) {
    throw ConfigError("model dimensions must be positive");
  }
  if (task == TaskKind::kRetrieval) {
    if (align.lambda2 > 0) throw ConfigError("retrieval samples carry no spans; set lambda2 = 0");
    if (align.lambda1 == 0) throw ConfigError("retrieval has no task loss; lambda1 = 0 leaves nothing to optimize");
  }
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& cfg) {
  static const std::vector<std::string> known = {
      "epochs", "batch_size", "lr", "beta1", "beta2", "weight_decay", "eps", "seed", "alpha",
      "lambda1", "lambda2", "use_false_language", "use_false_frames", "symmetric_global", "task",
      "vocab_size", "embed_dim", "hidden", "static_dim", "motion_dim", "max_frames", "max_tokens",
      "checkpoint_every", "clip_norm"};
  if (auto unknown = cfg.unknown_keys(known); !unknown.empty()) {
    throw ConfigError("train config: unknown key '" + unknown.front() + "'");
  }
  TrainConfig c;
  c.epochs = cfg.get_int("epochs", c.epochs);
  c.batch_size = cfg.get_int("batch_size", c.batch_size);
  c.optim.lr = cfg.get_double("lr", c.optim.lr);
  c.optim.beta1 = cfg.get_double("beta1", c.optim.beta1);
  c.optim.beta2 = cfg.get_double("beta2", c.optim.beta2);
  c.optim.weight_decay = cfg.get_double("weight_decay", c.optim.weight_decay);
  c.optim.eps = cfg.get_double("eps", c.optim.eps);
  c.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<long long>(c.seed)));
  c.align.alpha = cfg.get_double("alpha", c.align.alpha);
  c.align.lambda1 = cfg.get_double("lambda1", c.align.lambda1);
  c.align.lambda2 = cfg.get_double("lambda2", c.align.lambda2);
  c.align.use_false_language = cfg.get_bool("use_false_language", c.align.use_false_language);
  c.align.use_false_frames = cfg.get_bool("use_false_frames", c.align.use_false_frames);
  c.align.symmetric_global = cfg.get_bool("symmetric_global", c.align.symmetric_global);
  c.task = parse_task(cfg.get_string("task", task_name(c.task)));
  c.dims.vocab_size = cfg.get_int("vocab_size", c.dims.vocab_size);
  c.dims.embed_dim = cfg.get_int("embed_dim", c.dims.embed_dim);
  c.dims.hidden = cfg.get_int("hidden", c.dims.hidden);
  c.dims.static_dim = cfg.get_int("static_dim", c.dims.static_dim);
  c.dims.motion_dim = cfg.get_int("motion_dim", c.dims.motion_dim);
  c.dims.max_frames = cfg.get_int("max_frames", c.dims.max_frames);
  c.dims.max_tokens = cfg.get_int("max_tokens", c.dims.max_tokens);
  c.checkpoint_every = cfg.get_int("checkpoint_every", c.checkpoint_every);
  c.clip_norm = cfg.get_double("clip_norm", c.clip_norm);
  return c;
}

KeyValueConfig TrainConfig::to_config() const {
  KeyValueConfig c;
  c.set("epochs", std::to_string(epochs));
  c.set("batch_size", std::to_string(batch_size));
  c.set("lr", format_double(optim.lr));
  c.set("beta1", format_double(optim.beta1));
  c.set("beta2", format_double(optim.beta2));
  c.set("weight_decay", format_double(optim.weight_decay));
  c.set("eps", format_double(optim.eps));
  c.set("seed", std::to_string(seed));
  c.set("alpha", format_double(align.alpha));
  c.set("lambda1", format_double(align.lambda1));
  c.set("lambda2", format_double(align.lambda2));
  c.set("use_false_language", align.use_false_language ? "true" : "false");
  c.set("use_false_frames", align.use_false_frames ? "true" : "false");
  c.set("symmetric_global", align.symmetric_global ? "true" : "false");
  c.set("task", task_name(task));
  c.set("vocab_size", std::to_string(dims.vocab_size));
  c.set("embed_dim", std::to_string(dims.embed_dim));
  c.set("hidden", std::to_string(dims.hidden));
  c.set("static_dim", std::to_string(dims.static_dim));
  c.set("motion_dim", std::to_string(dims.motion_dim));
  c.set("max_frames", std::to_string(dims.max_frames));
  c.set("max_tokens", std::to_string(dims.max_tokens));
  c.set("checkpoint_every", std::to_string(checkpoint_every));
  c.set("clip_norm", format_double(clip_norm));
  return c;
}

std::string EpochLog::to_json() const {
  return "{\"epoch\":" + std::to_string(epoch) + ",\"L_task\":" + format_double(task) +
         ",\"L_glob\":" + format_double(global) + ",\"L_seg\":" + format_double(segment) +
         ",\"L_train\":" + format_double(total) + ",\"wall_ms\":" + format_double(wall_ms) + "}";
}

Checkpoint init_checkpoint(const TrainConfig& cfg) {
  cfg.validate();
  Checkpoint c;
  c.config = cfg;
  c.model = init_model<float>(cfg.dims, cfg.seed);
  auto params = c.model.tensors();
  c.optimizer = AdamWState<float>(std::span<const Tensor<float>>(params));
  c.seed = cfg.seed;
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  auto model = ckpt.model;  // handles share storage; named() needs a mutable object
  const auto named = model.named();
  if (ckpt.optimizer.first_moment.size() != named.size() || ckpt.optimizer.second_moment.size() != named.size()) {
    throw CheckpointError("optimizer state does not match the parameter list");
  }
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(kCheckpointMagic, 4);
    write_pod(out, Checkpoint::kVersion);
    write_string(out, ckpt.config.to_config().dump());
    write_pod(out, static_cast<std::uint64_t>(ckpt.epoch));
    write_pod(out, ckpt.seed);
    write_pod(out, static_cast<std::int64_t>(ckpt.optimizer.step));
    write_pod(out, static_cast<std::uint32_t>(named.size()));
    std::uint64_t offset = 0;
    for (const auto& n : named) {
      write_string(out, n.name);
      write_pod(out, static_cast<std::uint32_t>(n.tensor->rows()));
      write_pod(out, static_cast<std::uint32_t>(n.tensor->cols()));
      write_pod(out, std::uint8_t{0});  // dtype: float32
      write_pod(out, offset);
      offset += static_cast<std::uint64_t>(n.tensor->size());
    }
    write_pod(out, offset);
    for (const auto& n : named) write_floats(out, n.tensor->value());
    for (const auto& m : ckpt.optimizer.first_moment) write_floats(out, m);
    for (const auto& m : ckpt.optimizer.second_moment) write_floats(out, m);
    out.write(kCheckpointMagic, 4);
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw CheckpointError(path.string() + ": not an MLVC checkpoint");
  }
  const auto version = read_pod<std::uint32_t>(in, "version");
  if (version != Checkpoint::kVersion) {
    throw CheckpointError(path.string() + ": checkpoint version " + std::to_string(version) +
                          ", expected " + std::to_string(Checkpoint::kVersion));
  }
  Checkpoint c;
  try {
    c.config = TrainConfig::from_config(KeyValueConfig::parse(read_string(in, "config")));
    c.config.validate();
  } catch (const CheckpointError&) {
    throw;
  } catch (const Error& e) {
    throw CheckpointError(path.string() + ": invalid config echo: " + e.what());
  }
  c.epoch = static_cast<Index>(read_pod<std::uint64_t>(in, "epoch"));
  c.seed = read_pod<std::uint64_t>(in, "seed");
  const auto step = read_pod<std::int64_t>(in, "optimizer step");

  c.model = init_model<float>(c.config.dims, c.config.seed);
  auto named = c.model.named();
  const auto count = read_pod<std::uint32_t>(in, "parameter count");
  if (count != named.size()) {
    throw CheckpointError(path.string() + ": " + std::to_string(count) + " parameters, expected " +
                          std::to_string(named.size()));
  }
  std::uint64_t expected_offset = 0;
  for (const auto& n : named) {
    const auto name = read_string(in, "parameter name");
    const auto rows = read_pod<std::uint32_t>(in, "rows");
    const auto cols = read_pod<std::uint32_t>(in, "cols");
    const auto dtype = read_pod<std::uint8_t>(in, "dtype");
    const auto offset = read_pod<std::uint64_t>(in, "offset");
    if (name != n.name || rows != n.tensor->rows() || cols != n.tensor->cols() || dtype != 0 ||
        offset != expected_offset) {
      throw CheckpointError(path.string() + ": manifest entry '" + name + "' does not match the model");
    }
    expected_offset += static_cast<std::uint64_t>(n.tensor->size());
  }
  if (read_pod<std::uint64_t>(in, "payload size") != expected_offset) {
    throw CheckpointError(path.string() + ": manifest does not cover the payload");
  }
  std::vector<Matrix<float>> values, first, second;
  for (auto* dst : {&values, &first, &second}) {
    for (const auto& n : named) {
      Matrix<float> m(n.tensor->rows(), n.tensor->cols());
      read_floats(in, m, n.name);
      dst->push_back(std::move(m));
    }
  }
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw CheckpointError(path.string() + ": missing end marker");
  }
  for (std::size_t k = 0; k < named.size(); ++k) *named[k].tensor = Tensor<float>(std::move(values[k]), true);
  c.optimizer.first_moment = std::move(first);
  c.optimizer.second_moment = std::move(second);
  c.optimizer.step = step;
  return c;
}

std::vector<std::vector<Index>> make_batches(std::size_t n, Index batch_size, std::uint64_t seed,
                                             Index epoch) {
  if (n == 0) throw ConfigError("make_batches: no samples");
  if (batch_size < 1) throw ConfigError("make_batches: batch_size must be at least 1");
  std::vector<Index> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<Index>(i);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x6d6c7661u};
  std::mt19937_64 rng(seq);
  for (std::size_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(detail::unit_uniform(rng) * static_cast<double>(i + 1));
    std::swap(order[i], order[std::min(j, i)]);
  }
  std::vector<std::vector<Index>> batches;
  const auto b = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < n; start += b) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + b)));
  }
  return batches;
}

LossBreakdown train_step(std::span<const Sample* const> batch, ModelParams<float>& model,
                         AdamWState<float>& optimizer, const TrainConfig& cfg) {
  Graph<float> g;
  BatchLosses<float> losses = forward_losses(g, model, batch, cfg.task, cfg.align);
  auto params = model.tensors();
  for (auto& p : params) p.zero_grad();
  g.backward(losses.total);

  std::vector<Matrix<float>> grads;
  grads.reserve(params.size());
  const auto named = model.named();
  double sq = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    grads.push_back(params[k].grad());
    if (!grads.back().allFinite()) {
      throw NumericalError("non-finite gradient for parameter " + named[k].name);
    }
    sq += static_cast<double>(grads.back().squaredNorm());
  }
  if (cfg.clip_norm > 0) {
    const double norm = std::sqrt(sq);
    if (norm > cfg.clip_norm) {
      const auto factor = static_cast<float>(cfg.clip_norm / norm);
      for (auto& gr : grads) gr *= factor;
    }
  }
  adamw_step(std::span<Tensor<float>>(params), std::span<const Matrix<float>>(grads), optimizer, cfg.optim);
  for (auto& p : params) p.zero_grad();

  LossBreakdown out;
  auto value = [](const Tensor<float>& t) { return t.defined() ? static_cast<double>(t.item()) : 0.0; };
  out.task = value(losses.task);
  out.global = value(losses.global);
  out.segment = value(losses.segment);
  out.total = value(losses.total);
  return out;
}

TrainResult resume(const std::vector<Sample>& samples, Checkpoint state, const TrainHooks& hooks) {
  const TrainConfig& cfg = state.config;
  cfg.validate();
  TrainResult result;
  if (state.epoch >= cfg.epochs) {
    if (hooks.checkpoint_path) save_checkpoint(state, *hooks.checkpoint_path);
    result.checkpoint = std::move(state);
    return result;
  }
  if (samples.empty()) throw ConfigError("train: empty training set");
  for (const auto& s : samples) {
    if (s.task != cfg.task) {
      throw ConfigError("train: sample '" + s.id + "' is " + task_name(s.task) + ", config task is " +
                        task_name(cfg.task));
    }
  }
  while (state.epoch < cfg.epochs) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochLog log;
    log.epoch = state.epoch + 1;
    Index global_batches = 0;
    const auto batches = make_batches(samples.size(), cfg.batch_size, state.seed, state.epoch);
    for (const auto& idx : batches) {
      std::vector<const Sample*> batch;
      batch.reserve(idx.size());
      for (Index i : idx) batch.push_back(&samples[static_cast<std::size_t>(i)]);
      const LossBreakdown l = train_step(std::span<const Sample* const>(batch), state.model, state.optimizer, cfg);
      if (hooks.on_step) hooks.on_step(l);
      log.task += l.task;
      log.segment += l.segment;
      log.total += l.total;
      if (batch.size() >= 2 && cfg.align.lambda1 > 0) {
        log.global += l.global;
        ++global_batches;
      }
    }
    const auto n = static_cast<double>(batches.size());
    log.task /= n;
    log.segment /= n;
    log.total /= n;
    if (global_batches > 0) log.global /= static_cast<double>(global_batches);
    log.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    state.epoch += 1;
    result.log.push_back(log);
    if (hooks.on_epoch) hooks.on_epoch(log);
    if (hooks.checkpoint_path && cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0) {
      save_checkpoint(state, *hooks.checkpoint_path);
    }
  }
  if (hooks.checkpoint_path) save_checkpoint(state, *hooks.checkpoint_path);
  result.checkpoint = std::move(state);
  return result;
}

TrainResult train(const std::vector<Sample>& samples, const TrainConfig& cfg, const TrainHooks& hooks) {
  return resume(samples, init_checkpoint(cfg), hooks);
}

}  // namespace mlva
