// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <set>
#include <vector>

#include "mlva/ops.hpp"

namespace mlva {

struct AlignmentConfig {
  double alpha = 0.2;
  double lambda1 = 1.0;  // global alignment weight
  double lambda2 = 1.0;  // segment alignment weight
  bool use_false_language = true;
  bool use_false_frames = true;
  bool symmetric_global = true;

  void validate() const {
    if (!(alpha >= 0)) throw ConfigError("alpha must be non-negative");
    if (!(lambda1 >= 0) || !(lambda2 >= 0)) throw ConfigError("lambda weights must be non-negative");
  }
};

/// cos(E_L, E_V).
template <typename Scalar>
Tensor<Scalar> global_similarity(Graph<Scalar>& g, const Tensor<Scalar>& text,
                                 const Tensor<Scalar>& video) {
  return cosine_similarity(g, text, video);
}

/// Batch-wise hardest-negative hinge between pooled text and video encodings.
///
/// Row i of `text` and row i of `video` form the positive pair. Each text
/// anchor contributes hinge(max_{j != i} cos(t_i, v_j), cos(t_i, v_i)); with
/// symmetric_global each video anchor adds the mirrored term. The result is
/// the mean over all anchor terms.
template <typename Scalar>
Tensor<Scalar> global_alignment_loss(Graph<Scalar>& g, const Tensor<Scalar>& text,
                                     const Tensor<Scalar>& video, const AlignmentConfig& cfg) {
  if (text.rows() != video.rows() || text.cols() != video.cols()) {
    throw DimensionError("global_alignment_loss: text " + text.shape_str() + " vs video " +
                         video.shape_str());
  }
  const Index b = text.rows();
  if (b < 2) throw ConfigError("global_alignment_loss: a batch of at least 2 pairs is required");
  const auto alpha = static_cast<Scalar>(cfg.alpha);
  Tensor<Scalar> sims = cosine_matrix(g, text, video);  // [text i, video j]
  std::vector<Tensor<Scalar>> terms;
  terms.reserve(static_cast<std::size_t>(cfg.symmetric_global ? 2 * b : b));
  auto anchor = [&](Index i, bool text_anchor) {
    std::vector<Element> negatives;
    negatives.reserve(static_cast<std::size_t>(b - 1));
    for (Index j = 0; j < b; ++j) {
      if (j == i) continue;
      negatives.push_back(text_anchor ? Element{i, j} : Element{j, i});
    }
    Tensor<Scalar> hardest = max(g, gather(g, sims, std::move(negatives)));
    Tensor<Scalar> positive = gather(g, sims, {Element{i, i}});
    terms.push_back(hinge_margin(g, hardest, positive, alpha));
  };
  for (Index i = 0; i < b; ++i) anchor(i, true);
  if (cfg.symmetric_global) {
    for (Index i = 0; i < b; ++i) anchor(i, false);
  }
  return mean(g, concat_cols(g, std::span<const Tensor<Scalar>>(terms)));
}

/// cos((E_L + E_ans) / 2, E_f).
template <typename Scalar>
Tensor<Scalar> segment_similarity(Graph<Scalar>& g, const Tensor<Scalar>& text,
                                  const Tensor<Scalar>& answer, const Tensor<Scalar>& frame) {
  return cosine_similarity(g, scale(g, add(g, text, answer), Scalar(0.5)), frame);
}

/// Language/frame partition of one sample for the segment loss.
///
/// Language rows hold the averaged (E_L + E_ans) / 2 encodings: row 0 of
/// `languages` is the true language, rows 1.. the false ones.
template <typename Scalar>
struct SegmentPairing {
  Tensor<Scalar> languages;
  std::vector<Index> true_frames;
  std::vector<Index> false_frames;
  /// False when the true frames were not taken from a span annotation.
  bool grounded = true;

  Index false_language_count() const { return languages.defined() ? languages.rows() - 1 : 0; }

  void validate(Index frame_count) const {
    if (!languages.defined() || languages.rows() < 1) {
      throw DataError("segment pairing: missing true language");
    }
    if (true_frames.empty()) throw DataError("segment pairing: no true frames");
    std::set<Index> seen;
    for (auto set : {&true_frames, &false_frames}) {
      for (Index f : *set) {
        if (f < 0 || f >= frame_count) {
          throw DataError("segment pairing: frame index " + std::to_string(f) +
                          " outside [0, " + std::to_string(frame_count) + ")");
        }
        if (!seen.insert(f).second) {
          throw DataError("segment pairing: frame " + std::to_string(f) + " listed twice");
        }
      }
    }
  }
};

/// Sample-wise hardest-negative hinge between language variants and frames.
///
/// Negatives are (false language, true frame) pairs when use_false_language
/// is set and (true language, false frame) pairs when use_false_frames is
/// set, enumerated in that order; the hardest one is shared by every
/// positive (true language, true frame) pair and the per-positive hinges are
/// averaged.
template <typename Scalar>
Tensor<Scalar> segment_alignment_loss(Graph<Scalar>& g, const SegmentPairing<Scalar>& pairing,
                                      const Tensor<Scalar>& frames, const AlignmentConfig& cfg) {
  if (!cfg.use_false_language && !cfg.use_false_frames) {
    throw ConfigError("segment_alignment_loss: both negative sources are disabled");
  }
  pairing.validate(frames.rows());
  if (pairing.languages.cols() != frames.cols()) {
    throw DimensionError("segment_alignment_loss: languages " + pairing.languages.shape_str() +
                         " vs frames " + frames.shape_str());
  }
  std::vector<Element> negatives;
  if (cfg.use_false_language) {
    for (Index k = 1; k < pairing.languages.rows(); ++k) {
      for (Index f : pairing.true_frames) negatives.push_back({k, f});
    }
  }
  if (cfg.use_false_frames) {
    for (Index f : pairing.false_frames) negatives.push_back({0, f});
  }
  if (negatives.empty()) {
    const bool single_source = cfg.use_false_language != cfg.use_false_frames;
    if (!single_source || !pairing.grounded) {
      throw ConfigError(
          "segment_alignment_loss: no negative pairs can be formed from the enabled sources");
    }
    log_warning("segment_alignment_loss: the enabled negative source is empty; contributing 0");
    return Tensor<Scalar>::scalar(Scalar(0));
  }
  std::vector<Element> positives;
  positives.reserve(pairing.true_frames.size());
  for (Index f : pairing.true_frames) positives.push_back({0, f});

  Tensor<Scalar> sims = cosine_matrix(g, pairing.languages, frames);
  Tensor<Scalar> hardest = max(g, gather(g, sims, std::move(negatives)));
  Tensor<Scalar> pos = gather(g, sims, std::move(positives));
  return mean(g, hinge_margin(g, hardest, pos, static_cast<Scalar>(cfg.alpha)));
}

/// L_task + lambda1 L_glob + lambda2 L_seg. Terms with zero weight are
/// skipped, and an undefined L_task counts as zero (retrieval training).
template <typename Scalar>
Tensor<Scalar> combined_loss(Graph<Scalar>& g, const Tensor<Scalar>& task,
                             const Tensor<Scalar>& global, const Tensor<Scalar>& segment,
                             const AlignmentConfig& cfg) {
  Tensor<Scalar> total = task;
  auto add_term = [&](const Tensor<Scalar>& term, double weight, const char* name) {
    if (weight == 0.0) return;
    if (!term.defined()) {
      throw ConfigError(std::string("combined_loss: ") + name + " has nonzero weight but was not computed");
    }
    Tensor<Scalar> weighted = scale(g, term, static_cast<Scalar>(weight));
    total = total.defined() ? add(g, total, weighted) : weighted;
  };
  add_term(global, cfg.lambda1, "global loss");
  add_term(segment, cfg.lambda2, "segment loss");
  if (!total.defined()) throw ConfigError("combined_loss: nothing to optimize");
  return total;
}

}  // namespace mlva
