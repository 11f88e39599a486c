// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mlva/config.hpp"
#include "mlva/model.hpp"

namespace mlva {

struct MetricReport {
  TaskKind task = TaskKind::kQa;
  Index n_samples = 0;
  double accuracy = 0.0;
  double t2v_r1 = 0.0, t2v_r5 = 0.0, t2v_r10 = 0.0;
  double v2t_r1 = 0.0, v2t_r5 = 0.0, v2t_r10 = 0.0;
  double tiou_05 = 0.0, tiou_07 = 0.0;

  /// Stable key names; only the fields of `task` are emitted.
  KeyValueConfig to_config() const;
  void save(const std::filesystem::path& path) const;
};

/// Index of the largest entry; ties go to the lowest index.
Index argmax_lowest(const Matrix<float>& row);

/// Fraction of rows whose argmax equals the target.
double qa_accuracy(const std::vector<Matrix<float>>& logits, const std::vector<Index>& correct);

/// Fraction of ranks <= k. k larger than the pool is clamped with a warning.
double recall_at_k(const std::vector<Index>& ranks, Index k, Index pool_size);

struct MomentRates {
  double at_05 = 0.0;
  double at_07 = 0.0;
};
MomentRates moment_rates(const std::vector<Span>& predicted, const std::vector<Span>& truth);

/// Pooled encodings of every sample, computed in chunks without gradients.
struct EncodedSet {
  Matrix<float> text;   // one row per sample (QA: question + correct answer)
  Matrix<float> video;  // one row per sample
};
EncodedSet encode_set(const ModelParams<float>& model, const std::vector<Sample>& samples,
                      Index chunk = 64);

/// Per-sample QA logits (1 x C each).
std::vector<Matrix<float>> qa_logits_for(const ModelParams<float>& model, const std::vector<Sample>& samples,
                                         Index chunk = 64);

/// Text-to-video and video-to-text ranks over the whole set as pool.
struct RetrievalRanks {
  std::vector<Index> text_to_video;
  std::vector<Index> video_to_text;
};
RetrievalRanks retrieval_ranks(const EncodedSet& enc);

/// Predicted spans for moment samples.
std::vector<Span> predict_spans(const ModelParams<float>& model, const std::vector<Sample>& samples,
                                Index chunk = 64);

MetricReport eval_qa(const std::vector<Sample>& samples, const ModelParams<float>& model);
MetricReport eval_retrieval(const std::vector<Sample>& samples, const ModelParams<float>& model);
MetricReport eval_moment(const std::vector<Sample>& samples, const ModelParams<float>& model);
/// Dispatches on `task`; every sample must belong to it.
MetricReport evaluate(const std::vector<Sample>& samples, const ModelParams<float>& model, TaskKind task);

/// Cosine similarity of each candidate's language variant against each frame.
struct Heatmap {
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  Matrix<double> values;  // candidates x frames
};

/// rows: (E_L(question + candidate) + E_ans) / 2, columns: frame encodings.
Heatmap compute_heatmap(const Sample& sample, const ModelParams<float>& model,
                        const std::vector<std::string>& vocab = {});
void write_heatmap_csv(const Heatmap& h, const std::filesystem::path& path);

}  // namespace mlva
