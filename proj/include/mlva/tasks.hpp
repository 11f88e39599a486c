// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <optional>
#include <utility>
#include <vector>

#include "mlva/encoders.hpp"

namespace mlva {

/// Inclusive frame interval [start, end].
struct Span {
  Index start = 0;
  Index end = 0;

  Index length() const { return end - start + 1; }
  bool valid(Index frame_count) const { return 0 <= start && start <= end && end < frame_count; }
  friend bool operator==(const Span&, const Span&) = default;
};

struct QaAnnotation {
  std::vector<TokenSeq> candidates;
  Index correct_index = 0;
  std::optional<Span> span;

  void validate(Index frame_count) const {
    if (candidates.size() < 2) throw DataError("qa annotation: at least two candidates required");
    if (correct_index < 0 || correct_index >= static_cast<Index>(candidates.size())) {
      throw DataError("qa annotation: correct index " + std::to_string(correct_index) +
                      " out of range");
    }
    if (span && !span->valid(frame_count)) throw DataError("qa annotation: span outside video");
  }
};

/// Two-layer MLP head: in -> H (tanh) -> out.
template <typename Scalar>
struct MlpHead {
  Tensor<Scalar> w_hidden, b_hidden, w_out, b_out;
};

template <typename Scalar>
Tensor<Scalar> apply_head(Graph<Scalar>& g, const MlpHead<Scalar>& head, const Tensor<Scalar>& x) {
  return linear(g, tanh(g, linear(g, x, head.w_hidden, head.b_hidden)), head.w_out, head.b_out);
}

/// QA head scores [E_L; E_V; E_L * E_V] (3H) -> 1 logit.
template <typename Scalar>
struct QaDecoderParams {
  MlpHead<Scalar> head;
};

/// Start and end heads each score [E_f; E_L] (2H) -> 1 logit per frame.
template <typename Scalar>
struct MomentDecoderParams {
  MlpHead<Scalar> start;
  MlpHead<Scalar> end;
};

inline constexpr Token kSeparatorToken = 1;

/// question + [SEP] + candidate.
inline TokenSeq join_question_answer(const TokenSeq& question, const TokenSeq& answer) {
  TokenSeq joined;
  joined.reserve(question.size() + answer.size() + 1);
  joined.insert(joined.end(), question.begin(), question.end());
  joined.push_back(kSeparatorToken);
  joined.insert(joined.end(), answer.begin(), answer.end());
  return joined;
}

/// One logit per row pair (text row r, video row r). Returns N x 1.
template <typename Scalar>
Tensor<Scalar> qa_head(Graph<Scalar>& g, const Tensor<Scalar>& text_rows,
                       const Tensor<Scalar>& video_rows, const QaDecoderParams<Scalar>& p) {
  Tensor<Scalar> features =
      concat_cols(g, {text_rows, video_rows, mul(g, text_rows, video_rows)});
  return apply_head(g, p.head, features);
}

/// Logits (1 x C) for each candidate answer given the pooled video encoding.
template <typename Scalar>
Tensor<Scalar> qa_score_candidates(Graph<Scalar>& g, const VideoEncoding<Scalar>& video,
                                   const TokenSeq& question, const QaAnnotation& annotation,
                                   const TextEncoderParams<Scalar>& text_params,
                                   const QaDecoderParams<Scalar>& qa_params,
                                   Index max_tokens = 64) {
  const auto c = static_cast<Index>(annotation.candidates.size());
  if (c < 2) throw DataError("qa_score_candidates: at least two candidates required");
  std::vector<TokenSeq> joined;
  joined.reserve(annotation.candidates.size());
  for (const auto& cand : annotation.candidates) joined.push_back(join_question_answer(question, cand));
  auto text = encode_text_batch(g, std::span<const TokenSeq>(joined), text_params, max_tokens);
  Tensor<Scalar> video_rows = gather_rows(g, video.pooled, std::vector<Index>(static_cast<std::size_t>(c), 0));
  return reshape(g, qa_head(g, text.pooled, video_rows, qa_params), 1, c);
}

/// Softmax cross-entropy of one logit row against the correct candidate.
template <typename Scalar>
Tensor<Scalar> qa_loss(Graph<Scalar>& g, const Tensor<Scalar>& logits, Index correct_index) {
  if (logits.rows() != 1) throw DimensionError("qa_loss: expected 1 x C logits, got " + logits.shape_str());
  if (correct_index < 0 || correct_index >= logits.cols()) {
    throw DataError("qa_loss: correct index " + std::to_string(correct_index) + " out of range");
  }
  return cross_entropy(g, logits, {correct_index});
}

/// Shared rank rule for any score function: 1 + #{better} + #{equal with lower index}.
template <typename ScoreFn>
Index rank_from_scores(Index n, Index true_index, ScoreFn&& score) {
  const auto target = score(true_index);
  Index rank = 1;
  for (Index j = 0; j < n; ++j) {
    if (j == true_index) continue;
    const auto s = score(j);
    if (s > target || (s == target && j < true_index)) ++rank;
  }
  return rank;
}

/// 1-based position of `true_index` when `pool` rows are sorted by
/// descending cosine similarity to `query`. Ties rank the lower index first.
template <typename Scalar>
Index retrieval_rank(const Matrix<Scalar>& query, const Matrix<Scalar>& pool, Index true_index) {
  if (pool.rows() == 0) throw DataError("retrieval_rank: empty pool");
  if (true_index < 0 || true_index >= pool.rows()) throw DataError("retrieval_rank: true index out of range");
  if (query.size() != pool.cols()) throw DimensionError("retrieval_rank: width mismatch");
  const Scalar eps = static_cast<Scalar>(kCosineEps);
  const Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> q(query.data(), query.size());
  const Scalar qn = std::max(q.norm(), eps);
  auto sim = [&](Index j) { return pool.row(j).dot(q) / (std::max(pool.row(j).norm(), eps) * qn); };
  return rank_from_scores(pool.rows(), true_index, sim);
}

/// Start and end logit rows (each N x 1) for stacked frames and per-frame
/// query rows.
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> moment_head(Graph<Scalar>& g,
                                                      const Tensor<Scalar>& frame_rows,
                                                      const Tensor<Scalar>& text_rows,
                                                      const MomentDecoderParams<Scalar>& p) {
  Tensor<Scalar> features = concat_cols(g, {frame_rows, text_rows});
  return {apply_head(g, p.start, features), apply_head(g, p.end, features)};
}

/// Per-frame start and end logits (each 1 x T) for one video and query.
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> moment_logits(Graph<Scalar>& g,
                                                        const VideoEncoding<Scalar>& video,
                                                        const TextEncoding<Scalar>& query,
                                                        const MomentDecoderParams<Scalar>& p) {
  const Index t = video.frames.rows();
  Tensor<Scalar> text_rows = gather_rows(g, query.pooled, std::vector<Index>(static_cast<std::size_t>(t), 0));
  auto [start, end] = moment_head(g, video.frames, text_rows, p);
  return {reshape(g, start, 1, t), reshape(g, end, 1, t)};
}

/// CE(start_logits, span.start) + CE(end_logits, span.end).
template <typename Scalar>
Tensor<Scalar> moment_loss(Graph<Scalar>& g, const Tensor<Scalar>& start_logits,
                           const Tensor<Scalar>& end_logits, const Span& span) {
  if (start_logits.rows() != 1 || end_logits.rows() != 1 ||
      start_logits.cols() != end_logits.cols()) {
    throw DimensionError("moment_loss: logits " + start_logits.shape_str() + " and " +
                         end_logits.shape_str());
  }
  if (!span.valid(start_logits.cols())) {
    throw DataError("moment_loss: span [" + std::to_string(span.start) + ", " +
                    std::to_string(span.end) + "] outside " + std::to_string(start_logits.cols()) +
                    " frames");
  }
  return add(g, cross_entropy(g, start_logits, {span.start}), cross_entropy(g, end_logits, {span.end}));
}

/// argmax over s <= e of start[s] + end[e]; ties prefer the smaller start,
/// then the smaller end.
template <typename StartDerived, typename EndDerived>
Span moment_predict_span(const Eigen::DenseBase<StartDerived>& start,
                         const Eigen::DenseBase<EndDerived>& end) {
  const Index t = start.size();
  if (t < 1 || end.size() != t) throw DimensionError("moment_predict_span: logit length mismatch");
  Index prefix_best = 0;
  Span best{0, 0};
  auto best_score = start(0) + end(0);
  for (Index e = 0; e < t; ++e) {
    if (start(e) > start(prefix_best)) prefix_best = e;
    const auto score = start(prefix_best) + end(e);
    if (score > best_score || (score == best_score && prefix_best < best.start)) {
      best_score = score;
      best = {prefix_best, e};
    }
  }
  return best;
}

/// Temporal IoU of two inclusive frame intervals, on frame counts.
inline double tiou(const Span& a, const Span& b) {
  const Index inter = std::max<Index>(0, std::min(a.end, b.end) - std::max(a.start, b.start) + 1);
  const Index uni = a.length() + b.length() - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

}  // namespace mlva
