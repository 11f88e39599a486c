// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mlva/alignment.hpp"
#include "mlva/dataset.hpp"
#include "mlva/encoders.hpp"
#include "mlva/tasks.hpp"

namespace mlva {

/// Every learnable tensor of the network.
template <typename Scalar>
struct ModelParams {
  ModelDims dims;
  TextEncoderParams<Scalar> text;
  VideoEncoderParams<Scalar> video;
  QaDecoderParams<Scalar> qa;
  MomentDecoderParams<Scalar> moment;

  struct Named {
    std::string name;
    Tensor<Scalar>* tensor;
  };

  /// Stable parameter order used by initialization, the optimizer and checkpoints.
  std::vector<Named> named() {
    std::vector<Named> out = {
        {"text.embedding", &text.embedding},   {"text.w_input", &text.w_input},
        {"text.w_hidden", &text.w_hidden},     {"text.bias", &text.bias},
        {"text.query", &text.query},           {"video.w_hidden", &video.w_hidden},
        {"video.b_hidden", &video.b_hidden},   {"video.w_out", &video.w_out},
        {"video.b_out", &video.b_out},         {"video.query", &video.query},
    };
    auto head = [&](const std::string& prefix, MlpHead<Scalar>& h) {
      out.push_back({prefix + ".w_hidden", &h.w_hidden});
      out.push_back({prefix + ".b_hidden", &h.b_hidden});
      out.push_back({prefix + ".w_out", &h.w_out});
      out.push_back({prefix + ".b_out", &h.b_out});
    };
    head("qa", qa.head);
    head("moment.start", moment.start);
    head("moment.end", moment.end);
    return out;
  }

  std::vector<Tensor<Scalar>> tensors() {
    std::vector<Tensor<Scalar>> out;
    for (auto& n : named()) out.push_back(*n.tensor);
    return out;
  }
};

namespace detail {

// Uniform double in [0, 1) from the top 53 bits; independent of the
// standard library's distribution implementation.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <typename Scalar>
Tensor<Scalar> fan_in_uniform(Index rows, Index cols, Index fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Matrix<Scalar> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<Scalar>((2.0 * unit_uniform(rng) - 1.0) * bound);
  }
  return Tensor<Scalar>(std::move(m), true);
}

template <typename Scalar>
MlpHead<Scalar> init_head(Index in, Index hidden, std::mt19937_64& rng) {
  return {fan_in_uniform<Scalar>(in, hidden, in, rng), fan_in_uniform<Scalar>(1, hidden, in, rng),
          fan_in_uniform<Scalar>(hidden, 1, hidden, rng), fan_in_uniform<Scalar>(1, 1, hidden, rng)};
}

}  // namespace detail

/// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every matrix, drawn in
/// named() order from a stream seeded with `seed`. An embedding lookup reads
/// a single table entry per output, so the table uses fan-in 1.
template <typename Scalar>
ModelParams<Scalar> init_model(const ModelDims& dims, std::uint64_t seed) {
  if (dims.vocab_size < 1 || dims.embed_dim < 1 || dims.hidden < 1 || dims.frame_dim() < 1) {
    throw ConfigError("model dimensions must be positive");
  }
  std::mt19937_64 rng(seed);
  const Index h = dims.hidden;
  const Index d = dims.embed_dim;
  ModelParams<Scalar> m;
  m.dims = dims;
  m.text.embedding = detail::fan_in_uniform<Scalar>(dims.vocab_size, d, 1, rng);
  m.text.w_input = detail::fan_in_uniform<Scalar>(d, 4 * h, d + h, rng);
  m.text.w_hidden = detail::fan_in_uniform<Scalar>(h, 4 * h, d + h, rng);
  m.text.bias = detail::fan_in_uniform<Scalar>(1, 4 * h, d + h, rng);
  m.text.query = detail::fan_in_uniform<Scalar>(1, h, h, rng);
  m.video.w_hidden = detail::fan_in_uniform<Scalar>(dims.frame_dim(), h, dims.frame_dim(), rng);
  m.video.b_hidden = detail::fan_in_uniform<Scalar>(1, h, dims.frame_dim(), rng);
  m.video.w_out = detail::fan_in_uniform<Scalar>(h, h, h, rng);
  m.video.b_out = detail::fan_in_uniform<Scalar>(1, h, h, rng);
  m.video.query = detail::fan_in_uniform<Scalar>(1, h, h, rng);
  m.qa.head = detail::init_head<Scalar>(3 * h, h, rng);
  m.moment.start = detail::init_head<Scalar>(2 * h, h, rng);
  m.moment.end = detail::init_head<Scalar>(2 * h, h, rng);
  return m;
}

/// Value copy of a model with a different scalar type (and fresh gradients).
template <typename To, typename From>
ModelParams<To> cast_model(ModelParams<From>& from, bool requires_grad = true) {
  ModelParams<To> to;
  to.dims = from.dims;
  auto src = from.named();
  auto dst = to.named();
  for (std::size_t k = 0; k < src.size(); ++k) {
    *dst[k].tensor = Tensor<To>(src[k].tensor->value().template cast<To>(), requires_grad);
  }
  return to;
}

/// Loss terms of one batch. Undefined tensors are terms that were not
/// computed (zero weight, or not applicable to the task).
template <typename Scalar>
struct BatchLosses {
  Tensor<Scalar> task;
  Tensor<Scalar> global;
  Tensor<Scalar> segment;
  Tensor<Scalar> total;
  /// Weights actually applied (lambda1 is zeroed for batches smaller than 2).
  AlignmentConfig applied;
};

/// Encoded batch shared by the losses and by evaluation.
template <typename Scalar>
struct BatchEncoding {
  VideoBatchEncoding<Scalar> video;
  TextBatchEncoding<Scalar> text;  // per-task layout, see encode_batch
  Tensor<Scalar> answers;          // QA only: (E_L + E_ans) / 2 per candidate row
  std::vector<Index> text_offsets; // first text row of each sample
};

template <typename Scalar>
std::vector<Matrix<Scalar>> frames_of(std::span<const Sample* const> batch) {
  std::vector<Matrix<Scalar>> v;
  v.reserve(batch.size());
  for (const Sample* s : batch) v.push_back(s->frames.template cast<Scalar>());
  return v;
}

/// Encodes every video and the task's sentences. For QA the text rows are
/// question+candidate for each candidate of each sample (text_offsets
/// marks where a sample starts); otherwise one row per sample.
/// `with_answers` additionally encodes each QA candidate alone.
template <typename Scalar>
BatchEncoding<Scalar> encode_batch(Graph<Scalar>& g, const ModelParams<Scalar>& m,
                                   std::span<const Sample* const> batch, TaskKind task,
                                   bool with_answers) {
  BatchEncoding<Scalar> enc;
  const auto videos = frames_of<Scalar>(batch);
  enc.video = encode_video_batch(g, std::span<const Matrix<Scalar>>(videos), m.video, m.dims.max_frames);
  std::vector<TokenSeq> sentences;
  std::vector<TokenSeq> answers;
  for (const Sample* s : batch) {
    if (s->task != task) throw ConfigError("sample '" + s->id + "' does not belong to task " + task_name(task));
    enc.text_offsets.push_back(static_cast<Index>(sentences.size()));
    if (task == TaskKind::kQa) {
      for (const auto& c : s->qa->candidates) {
        sentences.push_back(join_question_answer(s->tokens, c));
        if (with_answers) answers.push_back(c);
      }
    } else {
      sentences.push_back(s->tokens);
    }
  }
  enc.text = encode_text_batch(g, std::span<const TokenSeq>(sentences), m.text, m.dims.max_tokens);
  if (task == TaskKind::kQa && with_answers) {
    auto ans = encode_text_batch(g, std::span<const TokenSeq>(answers), m.text, m.dims.max_tokens);
    enc.answers = scale(g, add(g, enc.text.pooled, ans.pooled), Scalar(0.5));
  }
  return enc;
}

namespace detail {

template <typename Scalar>
Tensor<Scalar> mean_of(Graph<Scalar>& g, const std::vector<Tensor<Scalar>>& terms) {
  return mean(g, concat_cols(g, std::span<const Tensor<Scalar>>(terms)));
}

inline std::vector<Index> iota_from(Index start, Index n) {
  std::vector<Index> v(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = start + i;
  return v;
}

inline bool uniform_candidates(std::span<const Sample* const> batch) {
  for (const Sample* s : batch) {
    if (s->qa->candidates.size() != batch.front()->qa->candidates.size()) return false;
  }
  return true;
}

inline bool uniform_frames(std::span<const Sample* const> batch) {
  for (const Sample* s : batch) {
    if (s->frame_count() != batch.front()->frame_count()) return false;
  }
  return true;
}

}  // namespace detail

/// Per-candidate QA logits, one 1 x C tensor per sample.
template <typename Scalar>
std::vector<Tensor<Scalar>> qa_logits(Graph<Scalar>& g, const ModelParams<Scalar>& m,
                                      const BatchEncoding<Scalar>& enc,
                                      std::span<const Sample* const> batch) {
  std::vector<Index> video_row;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    video_row.insert(video_row.end(), batch[b]->qa->candidates.size(), static_cast<Index>(b));
  }
  Tensor<Scalar> all = qa_head(g, enc.text.pooled, gather_rows(g, enc.video.pooled, std::move(video_row)), m.qa);
  std::vector<Tensor<Scalar>> out;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto c = static_cast<Index>(batch[b]->qa->candidates.size());
    out.push_back(reshape(g, gather_rows(g, all, detail::iota_from(enc.text_offsets[b], c)), 1, c));
  }
  return out;
}

/// Segment pairing of sample `b` from an encoded batch.
template <typename Scalar>
SegmentPairing<Scalar> segment_pairing(Graph<Scalar>& g, const BatchEncoding<Scalar>& enc,
                                       const Sample& s, std::size_t b) {
  SegmentPairing<Scalar> p;
  std::optional<Span> span;
  if (s.task == TaskKind::kQa) {
    const auto c = static_cast<Index>(s.qa->candidates.size());
    std::vector<Index> rows{enc.text_offsets[b] + s.qa->correct_index};
    for (Index k = 0; k < c; ++k) {
      if (k != s.qa->correct_index) rows.push_back(enc.text_offsets[b] + k);
    }
    p.languages = gather_rows(g, enc.answers, std::move(rows));
    span = s.qa->span;
  } else {
    // No answer: (E_L + E_ans) / 2 reduces to E_L.
    p.languages = row(g, enc.text.pooled, static_cast<Index>(b));
    span = s.moment;
  }
  const Index t = s.frame_count();
  if (span) {
    for (Index f = 0; f < t; ++f) (span->start <= f && f <= span->end ? p.true_frames : p.false_frames).push_back(f);
  } else {
    p.true_frames = detail::iota_from(0, t);
    p.grounded = false;
  }
  return p;
}

/// Forward pass of one training batch: task loss, global and segment
/// alignment losses, and their weighted sum.
template <typename Scalar>
BatchLosses<Scalar> forward_losses(Graph<Scalar>& g, const ModelParams<Scalar>& m,
                                   std::span<const Sample* const> batch, TaskKind task,
                                   const AlignmentConfig& cfg) {
  cfg.validate();
  if (batch.empty()) throw ConfigError("forward_losses: empty batch");
  if (task == TaskKind::kRetrieval && cfg.lambda2 > 0) {
    throw ConfigError("segment alignment needs span annotations, which retrieval samples lack");
  }
  BatchLosses<Scalar> out;
  out.applied = cfg;
  if (batch.size() < 2) out.applied.lambda1 = 0.0;
  const bool need_seg = out.applied.lambda2 > 0;
  const bool need_glob = out.applied.lambda1 > 0;
  if (task == TaskKind::kRetrieval && !need_glob && batch.size() >= 2) {
    throw ConfigError("retrieval training with lambda1 = 0 has nothing to optimize");
  }
  BatchEncoding<Scalar> enc = encode_batch(g, m, batch, task, need_seg);

  if (task == TaskKind::kQa) {
    auto logits = qa_logits(g, m, enc, batch);
    if (detail::uniform_candidates(batch)) {
      std::vector<Index> targets;
      for (const Sample* s : batch) targets.push_back(s->qa->correct_index);
      out.task = cross_entropy(g, concat_rows(g, std::span<const Tensor<Scalar>>(logits)), std::move(targets));
    } else {
      std::vector<Tensor<Scalar>> terms;
      for (std::size_t b = 0; b < batch.size(); ++b) terms.push_back(qa_loss(g, logits[b], batch[b]->qa->correct_index));
      out.task = detail::mean_of(g, terms);
    }
  } else if (task == TaskKind::kMoment) {
    std::vector<Index> text_row;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      text_row.insert(text_row.end(), static_cast<std::size_t>(batch[b]->frame_count()), static_cast<Index>(b));
    }
    auto [start, end] = moment_head(g, enc.video.frames, gather_rows(g, enc.text.pooled, std::move(text_row)), m.moment);
    if (detail::uniform_frames(batch)) {
      const auto n = static_cast<Index>(batch.size());
      const Index t = batch.front()->frame_count();
      std::vector<Index> starts, ends;
      for (const Sample* s : batch) {
        if (!s->moment->valid(t)) throw DataError("moment span outside video '" + s->id + "'");
        starts.push_back(s->moment->start);
        ends.push_back(s->moment->end);
      }
      out.task = add(g, cross_entropy(g, reshape(g, start, n, t), std::move(starts)),
                     cross_entropy(g, reshape(g, end, n, t), std::move(ends)));
    } else {
      std::vector<Tensor<Scalar>> terms;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& seg = enc.video.segments[b];
        auto rows = detail::iota_from(seg.start, seg.length);
        terms.push_back(moment_loss(g, reshape(g, gather_rows(g, start, rows), 1, seg.length),
                                    reshape(g, gather_rows(g, end, rows), 1, seg.length), *batch[b]->moment));
      }
      out.task = detail::mean_of(g, terms);
    }
  }

  if (need_glob) {
    Tensor<Scalar> text_rows = enc.text.pooled;
    if (task == TaskKind::kQa) {
      std::vector<Index> rows;
      for (std::size_t b = 0; b < batch.size(); ++b) rows.push_back(enc.text_offsets[b] + batch[b]->qa->correct_index);
      text_rows = gather_rows(g, enc.text.pooled, std::move(rows));
    }
    out.global = global_alignment_loss(g, text_rows, enc.video.pooled, out.applied);
  }

  if (need_seg) {
    std::vector<Tensor<Scalar>> terms;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& seg = enc.video.segments[b];
      Tensor<Scalar> frames = gather_rows(g, enc.video.frames, detail::iota_from(seg.start, seg.length));
      terms.push_back(segment_alignment_loss(g, segment_pairing(g, enc, *batch[b], b), frames, out.applied));
    }
    out.segment = detail::mean_of(g, terms);
  }

  out.total = combined_loss(g, out.task, out.global, out.segment, out.applied);
  return out;
}

}  // namespace mlva
