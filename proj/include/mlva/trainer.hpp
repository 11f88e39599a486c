// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mlva/adamw.hpp"
#include "mlva/config.hpp"
#include "mlva/model.hpp"

namespace mlva {

struct TrainConfig {
  Index epochs = 50;
  Index batch_size = 64;
  AdamWOptions optim;
  std::uint64_t seed = 0;
  AlignmentConfig align;
  TaskKind task = TaskKind::kQa;
  ModelDims dims;
  Index checkpoint_every = 10;
  double clip_norm = 0.0;  // global-norm clip; 0 disables

  void validate() const;
  static TrainConfig from_config(const KeyValueConfig& cfg);
  KeyValueConfig to_config() const;
};

/// Scalar values of the four loss terms. Terms that were not computed are 0.
struct LossBreakdown {
  double task = 0.0;
  double global = 0.0;
  double segment = 0.0;
  double total = 0.0;
};

struct EpochLog {
  Index epoch = 0;  // 1-based
  double task = 0.0;
  double global = 0.0;
  double segment = 0.0;
  double total = 0.0;
  double wall_ms = 0.0;

  std::string to_json() const;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  TrainConfig config;
  ModelParams<float> model;
  AdamWState<float> optimizer;
  Index epoch = 0;  // completed epochs
  std::uint64_t seed = 0;
};

Checkpoint init_checkpoint(const TrainConfig& cfg);

/// "MLVC" binary: config echo, parameter manifest, little-endian float32
/// payload (parameters, then first and second moments), step, epoch, seed.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Indices 0..n-1 shuffled by a stream derived from (seed, epoch) and cut
/// into batches of `batch_size`; the last batch may be short.
std::vector<std::vector<Index>> make_batches(std::size_t n, Index batch_size, std::uint64_t seed,
                                             Index epoch);

/// Forward, backward and one AdamW update on `batch`.
LossBreakdown train_step(std::span<const Sample* const> batch, ModelParams<float>& model,
                         AdamWState<float>& optimizer, const TrainConfig& cfg);

struct TrainHooks {
  /// Written every checkpoint_every epochs and after the last epoch.
  std::optional<std::filesystem::path> checkpoint_path;
  std::function<void(const EpochLog&)> on_epoch;
  std::function<void(const LossBreakdown&)> on_step;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> log;
};

/// Runs cfg.epochs epochs from scratch.
TrainResult train(const std::vector<Sample>& samples, const TrainConfig& cfg,
                  const TrainHooks& hooks = {});

/// Continues `start` until it has completed `start.config.epochs` epochs.
TrainResult resume(const std::vector<Sample>& samples, Checkpoint start, const TrainHooks& hooks = {});

}  // namespace mlva
