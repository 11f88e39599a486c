// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mlva/tasks.hpp"

namespace mlva {

enum class TaskKind { kRetrieval, kQa, kMoment };

const char* task_name(TaskKind kind);
TaskKind parse_task(const std::string& name);

/// One paired datum: precomputed frame features, a token sequence, and the
/// task annotation. For QA `tokens` is the question, for moment retrieval
/// the query, for retrieval the description.
struct Sample {
  std::string id;
  Matrix<float> frames;  // T_fr x (static_dim + motion_dim)
  Index static_dim = 0;
  Index motion_dim = 0;
  TokenSeq tokens;
  TaskKind task = TaskKind::kRetrieval;
  std::optional<QaAnnotation> qa;
  std::optional<Span> moment;

  Index frame_count() const { return frames.rows(); }

  /// Throws DataError when any Sample invariant is violated.
  void validate(Index vocab_size) const;

  friend bool operator==(const Sample& a, const Sample& b);
};

struct Dataset {
  static constexpr int kVersion = 1;

  Index static_dim = 0;
  Index motion_dim = 0;
  TaskKind task = TaskKind::kRetrieval;
  std::vector<std::string> vocab;
  std::vector<Sample> samples;

  Index vocab_size() const { return static_cast<Index>(vocab.size()); }
  const Sample& find(const std::string& id) const;
};

/// Line-delimited JSON: a header object, then one object per sample.
/// Floats are written with round-trip-exact precision. With `features_file`
/// set, frames go to that binary file (next to `path`) instead of inline.
void write_dataset(const Dataset& data, const std::filesystem::path& path,
                   const std::string& features_file = "");
Dataset read_dataset(const std::filesystem::path& path);

/// Packed little-endian frame features ("MLVA" v1) with a manifest of
/// (sample id, payload offset, frame count).
struct FeatureManifestEntry {
  std::string id;
  std::uint64_t offset = 0;  // in floats from the start of the payload
  std::uint32_t frames = 0;
};

void write_feature_file(const std::filesystem::path& path, Index static_dim, Index motion_dim,
                        const std::vector<Sample>& samples);

struct FeatureFile {
  Index static_dim = 0;
  Index motion_dim = 0;
  std::vector<FeatureManifestEntry> manifest;
  std::map<std::string, Matrix<float>> frames;
};

FeatureFile read_feature_file(const std::filesystem::path& path);

/// Frame indices kept when a video of `frames` frames is capped at `cap`.
std::vector<Index> subsample_indices(Index frames, Index cap);

/// Caps the frame count at `cap` by uniform subsampling and remaps spans onto
/// the kept frames.
void cap_frames(Sample& sample, Index cap);

/// Order-sensitive FNV-1a digest over ids, tokens, annotations and raw frame bits.
std::uint64_t checksum(const std::vector<Sample>& samples);

}  // namespace mlva
