// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mlva/ops.hpp"

namespace mlva {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

/// Widths shared by every model component.
struct ModelDims {
  Index vocab_size = 256;
  Index embed_dim = 64;
  Index hidden = 128;
  Index static_dim = 64;
  Index motion_dim = 32;
  Index max_frames = 64;
  Index max_tokens = 64;

  Index frame_dim() const { return static_dim + motion_dim; }
};

template <typename Scalar>
struct TextEncoderParams {
  Tensor<Scalar> embedding;  // V x D_e
  Tensor<Scalar> w_input;    // D_e x 4H
  Tensor<Scalar> w_hidden;   // H x 4H
  Tensor<Scalar> bias;       // 1 x 4H
  Tensor<Scalar> query;      // 1 x H
};

template <typename Scalar>
struct VideoEncoderParams {
  Tensor<Scalar> w_hidden;  // (D_s + D_m) x H
  Tensor<Scalar> b_hidden;  // 1 x H
  Tensor<Scalar> w_out;     // H x H
  Tensor<Scalar> b_out;     // 1 x H
  Tensor<Scalar> query;     // 1 x H
};

/// Per-word encodings and their pooled sentence encoding.
template <typename Scalar>
struct TextEncoding {
  Tensor<Scalar> words;   // T x H
  Tensor<Scalar> pooled;  // 1 x H
};

template <typename Scalar>
struct VideoEncoding {
  Tensor<Scalar> frames;  // T x H
  Tensor<Scalar> pooled;  // 1 x H
};

/// A batch of N sentences encoded together. `words` is padded to `steps`
/// rows per sentence (row n*steps + t); padded rows are zero.
template <typename Scalar>
struct TextBatchEncoding {
  Tensor<Scalar> words;
  Tensor<Scalar> pooled;  // N x H
  std::vector<Index> lengths;
  Index steps = 0;
};

/// A batch of videos. Frame encodings are stacked without padding;
/// `segments[k]` locates video k inside `frames`.
template <typename Scalar>
struct VideoBatchEncoding {
  Tensor<Scalar> frames;
  Tensor<Scalar> pooled;  // N x H
  std::vector<RowSegment> segments;
};

/// Weighted sum of `rows` with weights softmax(rows q^T / sqrt(H)).
/// Built from primitive ops; attention_pool_segments is the batched form.
template <typename Scalar>
Tensor<Scalar> attention_pool(Graph<Scalar>& g, const Tensor<Scalar>& rows,
                              const Tensor<Scalar>& query) {
  if (query.rows() != 1 || query.cols() != rows.cols()) {
    throw DimensionError("attention_pool: query " + query.shape_str() + " does not match rows " +
                         rows.shape_str());
  }
  const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(rows.cols()));
  Tensor<Scalar> scores = scale(g, transpose(g, matmul(g, rows, transpose(g, query))), inv_sqrt);
  Tensor<Scalar> weights = softmax(g, scores);
  return matmul(g, weights, rows);
}

template <typename Scalar>
TextBatchEncoding<Scalar> encode_text_batch(Graph<Scalar>& g, std::span<const TokenSeq> sentences,
                                            const TextEncoderParams<Scalar>& p,
                                            Index max_tokens = 64) {
  if (sentences.empty()) throw EmptySequenceError("encode_text: no sentences");
  const Index vocab = p.embedding.rows();
  TextBatchEncoding<Scalar> enc;
  enc.lengths.reserve(sentences.size());
  for (const auto& s : sentences) {
    if (s.empty()) throw EmptySequenceError("encode_text: empty token sequence");
    if (static_cast<Index>(s.size()) > max_tokens) {
      throw DataError("encode_text: sequence of " + std::to_string(s.size()) +
                      " tokens exceeds the limit of " + std::to_string(max_tokens));
    }
    for (Token t : s) {
      if (t < 0 || t >= vocab) {
        throw DataError("encode_text: token id " + std::to_string(t) +
                        " outside vocabulary of size " + std::to_string(vocab));
      }
    }
    enc.lengths.push_back(static_cast<Index>(s.size()));
    enc.steps = std::max(enc.steps, static_cast<Index>(s.size()));
  }
  std::vector<Index> ids(sentences.size() * static_cast<std::size_t>(enc.steps), 0);
  for (std::size_t n = 0; n < sentences.size(); ++n) {
    for (std::size_t t = 0; t < sentences[n].size(); ++t) {
      ids[n * static_cast<std::size_t>(enc.steps) + t] = sentences[n][t];
    }
  }
  Tensor<Scalar> embedded = gather_rows(g, p.embedding, std::move(ids));
  enc.words = lstm(g, embedded, p.w_input, p.w_hidden, p.bias, enc.lengths, enc.steps);
  std::vector<RowSegment> segs;
  segs.reserve(sentences.size());
  for (std::size_t n = 0; n < sentences.size(); ++n) {
    segs.push_back({static_cast<Index>(n) * enc.steps, enc.lengths[n]});
  }
  enc.pooled = attention_pool_segments(g, enc.words, p.query, std::move(segs));
  return enc;
}

/// Embedding -> LSTM -> attention pooling for one sentence.
template <typename Scalar>
TextEncoding<Scalar> encode_text(Graph<Scalar>& g, const TokenSeq& tokens,
                                 const TextEncoderParams<Scalar>& p, Index max_tokens = 64) {
  auto batch = encode_text_batch(g, std::span<const TokenSeq>(&tokens, 1), p, max_tokens);
  return {batch.words, batch.pooled};
}

template <typename Scalar>
VideoBatchEncoding<Scalar> encode_video_batch(Graph<Scalar>& g,
                                              std::span<const Matrix<Scalar>> videos,
                                              const VideoEncoderParams<Scalar>& p,
                                              Index max_frames = 64) {
  if (videos.empty()) throw EmptySequenceError("encode_video: no videos");
  const Index width = p.w_hidden.rows();
  VideoBatchEncoding<Scalar> enc;
  Index total = 0;
  for (const auto& v : videos) {
    if (v.rows() < 1) throw EmptySequenceError("encode_video: video without frames");
    if (v.rows() > max_frames) {
      throw DataError("encode_video: " + std::to_string(v.rows()) + " frames exceed the cap of " +
                      std::to_string(max_frames));
    }
    if (v.cols() != width) {
      throw DataError("encode_video: frame width " + std::to_string(v.cols()) +
                      " does not match the encoder input width " + std::to_string(width));
    }
    enc.segments.push_back({total, v.rows()});
    total += v.rows();
  }
  Matrix<Scalar> stacked(total, width);
  for (std::size_t k = 0; k < videos.size(); ++k) {
    stacked.middleRows(enc.segments[k].start, enc.segments[k].length) = videos[k];
  }
  Tensor<Scalar> input(std::move(stacked));
  Tensor<Scalar> hidden = tanh(g, linear(g, input, p.w_hidden, p.b_hidden));
  enc.frames = linear(g, hidden, p.w_out, p.b_out);
  enc.pooled = attention_pool_segments(g, enc.frames, p.query, enc.segments);
  return enc;
}

/// Per-frame MLP over concatenated static+motion features, then pooling.
template <typename Scalar>
VideoEncoding<Scalar> encode_video(Graph<Scalar>& g, const Matrix<Scalar>& frames,
                                   const VideoEncoderParams<Scalar>& p, Index max_frames = 64) {
  auto batch = encode_video_batch(g, std::span<const Matrix<Scalar>>(&frames, 1), p, max_frames);
  return {batch.frames, batch.pooled};
}

}  // namespace mlva
