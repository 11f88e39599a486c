// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "mlva/config.hpp"
#include "mlva/dataset.hpp"

namespace mlva {

/// A latent theme: one visual prototype and a disjoint set of words for it.
struct Concept {
  int id = 0;
  Eigen::VectorXf visual_prototype;
  std::vector<Token> vocab_tokens;
};

struct CorpusSpec {
  Index n_concepts = 16;
  Index n_train = 512;
  Index n_test = 128;
  Index frames_per_video = 24;
  Index segments_per_video = 4;
  double noise_sigma = 0.3;
  TaskKind task = TaskKind::kQa;
  Index candidates = 4;
  Index tokens_per_concept = 8;
  Index vocab_size = 256;
  Index static_dim = 64;
  Index motion_dim = 32;
  std::uint64_t seed = 0;

  void validate() const;
  static CorpusSpec from_config(const KeyValueConfig& cfg);
  KeyValueConfig to_config() const;
};

struct SyntheticCorpus {
  Dataset train;
  Dataset test;
  std::vector<Concept> concepts;
  /// Per sample (train then test): the concept shown in every frame.
  std::vector<std::vector<int>> frame_concepts;
};

/// Token ids of the fixed function words, below the concept token range.
namespace vocab_ids {
inline constexpr Token kPad = 0;
inline constexpr Token kSep = 1;
inline constexpr Token kWhat = 2;
inline constexpr Token kIs = 3;
inline constexpr Token kShown = 4;
inline constexpr Token kQuestionMark = 5;
inline constexpr Token kIn = 6;
inline constexpr Token kThe = 7;
inline constexpr Token kA = 8;
inline constexpr Token kVideo = 9;
inline constexpr Token kOf = 10;
inline constexpr Token kThen = 11;
inline constexpr Token kFind = 12;
inline constexpr Token kMoment = 13;
inline constexpr Token kSegment = 14;
inline constexpr Token kFirstOrdinal = 15;  // 8 ordinal words follow
inline constexpr Token kFirstConcept = 32;
}  // namespace vocab_ids

/// Builds a learnable paired corpus with known ground truth. Videos are runs
/// of concept segments (prototype plus gaussian noise per frame). QA asks
/// which word describes a given segment; wrong candidates name concepts
/// absent from the video, so answering requires looking at the frames.
SyntheticCorpus generate_corpus(const CorpusSpec& spec);

}  // namespace mlva
