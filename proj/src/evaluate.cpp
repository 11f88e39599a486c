// SPDX-License-Identifier: Apache-2.0
#include "mlva/evaluate.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace mlva {
namespace {

ModelParams<float> frozen(const ModelParams<float>& model) {
  auto shared = model;
  return cast_model<float>(shared, false);
}

template <typename Fn>
void for_chunks(const std::vector<Sample>& samples, Index chunk, Fn&& fn) {
  if (chunk < 1) throw ConfigError("evaluation chunk size must be positive");
  const auto c = static_cast<std::size_t>(chunk);
  for (std::size_t start = 0; start < samples.size(); start += c) {
    std::vector<const Sample*> batch;
    for (std::size_t i = start; i < std::min(samples.size(), start + c); ++i) batch.push_back(&samples[i]);
    fn(std::span<const Sample* const>(batch));
  }
}

void require_task(const std::vector<Sample>& samples, TaskKind task) {
  if (samples.empty()) throw DataError(std::string("cannot evaluate ") + task_name(task) + " on an empty set");
  for (const auto& s : samples) {
    if (s.task != task) {
      throw ConfigError("sample '" + s.id + "' is " + task_name(s.task) + ", expected " + task_name(task));
    }
  }
}

std::string words(const TokenSeq& tokens, const std::vector<std::string>& vocab) {
  std::string out;
  for (Token t : tokens) {
    if (!out.empty()) out += ' ';
    const auto k = static_cast<std::size_t>(t);
    out += k < vocab.size() ? vocab[k] : std::to_string(t);
  }
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

}  // namespace

KeyValueConfig MetricReport::to_config() const {
  KeyValueConfig c;
  c.set("task", task_name(task));
  c.set("n_samples", std::to_string(n_samples));
  switch (task) {
    case TaskKind::kQa:
      c.set("accuracy", format_double(accuracy));
      break;
    case TaskKind::kRetrieval:
      c.set("t2v_r1", format_double(t2v_r1));
      c.set("t2v_r5", format_double(t2v_r5));
      c.set("t2v_r10", format_double(t2v_r10));
      c.set("v2t_r1", format_double(v2t_r1));
      c.set("v2t_r5", format_double(v2t_r5));
      c.set("v2t_r10", format_double(v2t_r10));
      break;
    case TaskKind::kMoment:
      c.set("tiou_0.5", format_double(tiou_05));
      c.set("tiou_0.7", format_double(tiou_07));
      break;
  }
  return c;
}

void MetricReport::save(const std::filesystem::path& path) const { to_config().save(path); }

Index argmax_lowest(const Matrix<float>& row) {
  if (row.size() == 0) throw DimensionError("argmax of an empty row");
  Index best = 0;
  for (Index i = 1; i < row.size(); ++i) {
    if (row.data()[i] > row.data()[best]) best = i;
  }
  return best;
}

double qa_accuracy(const std::vector<Matrix<float>>& logits, const std::vector<Index>& correct) {
  if (logits.empty()) throw DataError("qa accuracy of an empty set");
  if (logits.size() != correct.size()) throw DimensionError("qa accuracy: logits and targets differ in count");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) hits += argmax_lowest(logits[i]) == correct[i];
  return static_cast<double>(hits) / static_cast<double>(logits.size());
}

double recall_at_k(const std::vector<Index>& ranks, Index k, Index pool_size) {
  if (ranks.empty()) throw DataError("recall of an empty query set");
  if (k < 1) throw ConfigError("recall cut-off must be positive");
  if (k > pool_size) {
    log_warning("R@" + std::to_string(k) + " exceeds the pool of " + std::to_string(pool_size) +
                "; clamped to " + std::to_string(pool_size));
    k = pool_size;
  }
  std::size_t hits = 0;
  for (Index r : ranks) hits += r <= k;
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

MomentRates moment_rates(const std::vector<Span>& predicted, const std::vector<Span>& truth) {
  if (predicted.empty()) throw DataError("moment rates of an empty set");
  if (predicted.size() != truth.size()) throw DimensionError("moment rates: prediction and truth counts differ");
  std::size_t a = 0, b = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double iou = tiou(predicted[i], truth[i]);
    a += iou >= 0.5;
    b += iou >= 0.7;
  }
  const auto n = static_cast<double>(predicted.size());
  return {static_cast<double>(a) / n, static_cast<double>(b) / n};
}

EncodedSet encode_set(const ModelParams<float>& model, const std::vector<Sample>& samples, Index chunk) {
  if (samples.empty()) throw DataError("cannot encode an empty set");
  const TaskKind task = samples.front().task;
  require_task(samples, task);
  const auto m = frozen(model);
  const auto n = static_cast<Index>(samples.size());
  EncodedSet out{Matrix<float>(n, m.dims.hidden), Matrix<float>(n, m.dims.hidden)};
  Index row = 0;
  for_chunks(samples, chunk, [&](std::span<const Sample* const> batch) {
    Graph<float> g;
    auto enc = encode_batch(g, m, batch, task, false);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      Index text_row = enc.text_offsets[b];
      if (task == TaskKind::kQa) text_row += batch[b]->qa->correct_index;
      out.text.row(row) = enc.text.pooled.value().row(text_row);
      out.video.row(row) = enc.video.pooled.value().row(static_cast<Index>(b));
      ++row;
    }
  });
  return out;
}

std::vector<Matrix<float>> qa_logits_for(const ModelParams<float>& model, const std::vector<Sample>& samples,
                                         Index chunk) {
  require_task(samples, TaskKind::kQa);
  const auto m = frozen(model);
  std::vector<Matrix<float>> out;
  for_chunks(samples, chunk, [&](std::span<const Sample* const> batch) {
    Graph<float> g;
    auto enc = encode_batch(g, m, batch, TaskKind::kQa, false);
    for (auto& l : qa_logits(g, m, enc, batch)) out.push_back(l.value());
  });
  return out;
}

RetrievalRanks retrieval_ranks(const EncodedSet& enc) {
  const Index n = enc.text.rows();
  if (n == 0 || enc.video.rows() != n) throw DataError("retrieval ranks need equally many texts and videos");
  RetrievalRanks r;
  for (Index i = 0; i < n; ++i) {
    r.text_to_video.push_back(retrieval_rank(Matrix<float>(enc.text.row(i)), enc.video, i));
    r.video_to_text.push_back(retrieval_rank(Matrix<float>(enc.video.row(i)), enc.text, i));
  }
  return r;
}

std::vector<Span> predict_spans(const ModelParams<float>& model, const std::vector<Sample>& samples, Index chunk) {
  require_task(samples, TaskKind::kMoment);
  const auto m = frozen(model);
  std::vector<Span> out;
  for_chunks(samples, chunk, [&](std::span<const Sample* const> batch) {
    Graph<float> g;
    auto enc = encode_batch(g, m, batch, TaskKind::kMoment, false);
    std::vector<Index> text_row;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      text_row.insert(text_row.end(), static_cast<std::size_t>(batch[b]->frame_count()), static_cast<Index>(b));
    }
    auto [start, end] = moment_head(g, enc.video.frames, gather_rows(g, enc.text.pooled, std::move(text_row)), m.moment);
    for (const auto& seg : enc.video.segments) {
      out.push_back(moment_predict_span(start.value().col(0).segment(seg.start, seg.length),
                                        end.value().col(0).segment(seg.start, seg.length)));
    }
  });
  return out;
}

MetricReport eval_qa(const std::vector<Sample>& samples, const ModelParams<float>& model) {
  require_task(samples, TaskKind::kQa);
  std::vector<Index> correct;
  for (const auto& s : samples) correct.push_back(s.qa->correct_index);
  MetricReport r;
  r.task = TaskKind::kQa;
  r.n_samples = static_cast<Index>(samples.size());
  r.accuracy = qa_accuracy(qa_logits_for(model, samples), correct);
  return r;
}

MetricReport eval_retrieval(const std::vector<Sample>& samples, const ModelParams<float>& model) {
  require_task(samples, TaskKind::kRetrieval);
  const auto ranks = retrieval_ranks(encode_set(model, samples));
  const auto n = static_cast<Index>(samples.size());
  MetricReport r;
  r.task = TaskKind::kRetrieval;
  r.n_samples = n;
  r.t2v_r1 = recall_at_k(ranks.text_to_video, 1, n);
  r.t2v_r5 = recall_at_k(ranks.text_to_video, 5, n);
  r.t2v_r10 = recall_at_k(ranks.text_to_video, 10, n);
  r.v2t_r1 = recall_at_k(ranks.video_to_text, 1, n);
  r.v2t_r5 = recall_at_k(ranks.video_to_text, 5, n);
  r.v2t_r10 = recall_at_k(ranks.video_to_text, 10, n);
  return r;
}

MetricReport eval_moment(const std::vector<Sample>& samples, const ModelParams<float>& model) {
  require_task(samples, TaskKind::kMoment);
  std::vector<Span> truth;
  for (const auto& s : samples) truth.push_back(*s.moment);
  const auto rates = moment_rates(predict_spans(model, samples), truth);
  MetricReport r;
  r.task = TaskKind::kMoment;
  r.n_samples = static_cast<Index>(samples.size());
  r.tiou_05 = rates.at_05;
  r.tiou_07 = rates.at_07;
  return r;
}

MetricReport evaluate(const std::vector<Sample>& samples, const ModelParams<float>& model, TaskKind task) {
  switch (task) {
    case TaskKind::kQa: return eval_qa(samples, model);
    case TaskKind::kRetrieval: return eval_retrieval(samples, model);
    case TaskKind::kMoment: return eval_moment(samples, model);
  }
  throw ConfigError("unknown task");
}

Heatmap compute_heatmap(const Sample& sample, const ModelParams<float>& model, const std::vector<std::string>& vocab) {
  if (sample.task != TaskKind::kQa) throw ConfigError("heatmap needs a qa sample, '" + sample.id + "' is " + task_name(sample.task));
  const auto m = frozen(model);
  const Sample* one[] = {&sample};
  Graph<float> g;
  auto enc = encode_batch(g, m, std::span<const Sample* const>(one), TaskKind::kQa, true);
  auto sims = cosine_matrix(g, enc.answers, enc.video.frames);
  Heatmap h;
  h.values = sims.value().cast<double>();
  for (std::size_t c = 0; c < sample.qa->candidates.size(); ++c) {
    h.row_labels.push_back(words(sample.tokens, vocab) + " | " + words(sample.qa->candidates[c], vocab));
  }
  for (Index t = 0; t < sample.frame_count(); ++t) h.col_labels.push_back("frame_" + std::to_string(t));
  return h;
}

void write_heatmap_csv(const Heatmap& h, const std::filesystem::path& path) {
  if (h.values.rows() != static_cast<Index>(h.row_labels.size()) ||
      h.values.cols() != static_cast<Index>(h.col_labels.size())) {
    throw DimensionError("heatmap labels do not match its matrix");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "language";
  for (const auto& c : h.col_labels) out << ',' << csv_field(c);
  out << '\n' << std::setprecision(9);
  for (Index r = 0; r < h.values.rows(); ++r) {
    out << csv_field(h.row_labels[static_cast<std::size_t>(r)]);
    for (Index c = 0; c < h.values.cols(); ++c) out << ',' << h.values(r, c);
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace mlva
