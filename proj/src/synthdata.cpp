// SPDX-License-Identifier: Apache-2.0
#include "mlva/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

namespace mlva {
namespace {

constexpr Index kOrdinals = 8;

std::vector<std::string> build_vocab(const CorpusSpec& spec) {
  std::vector<std::string> v(static_cast<std::size_t>(spec.vocab_size));
  const char* fixed[] = {"<pad>", "<sep>", "what", "is",  "shown", "?",    "in",     "the",
                         "a",     "video", "of",   "then", "find", "moment", "segment"};
  const char* ordinals[] = {"first", "second", "third",   "fourth",
                            "fifth", "sixth",  "seventh", "eighth"};
  for (std::size_t i = 0; i < std::size(fixed); ++i) v[i] = fixed[i];
  for (Index i = 0; i < kOrdinals; ++i) v[static_cast<std::size_t>(vocab_ids::kFirstOrdinal + i)] = ordinals[i];
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i].empty()) v[i] = "<unused" + std::to_string(i) + ">";
  }
  for (Index c = 0; c < spec.n_concepts; ++c) {
    for (Index j = 0; j < spec.tokens_per_concept; ++j) {
      const auto id = vocab_ids::kFirstConcept + c * spec.tokens_per_concept + j;
      v[static_cast<std::size_t>(id)] = "c" + std::to_string(c) + "_w" + std::to_string(j);
    }
  }
  return v;
}

std::vector<Concept> make_concepts(const CorpusSpec& spec, std::mt19937_64& rng) {
  const Index width = spec.static_dim + spec.motion_dim;
  const float max_cos = static_cast<float>(std::cos(10.0 * M_PI / 180.0));
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::vector<Concept> concepts;
  for (Index c = 0; c < spec.n_concepts; ++c) {
    Concept k;
    k.id = static_cast<int>(c);
    for (int attempt = 0;; ++attempt) {
      if (attempt > 1000) throw ConfigError("cannot place concept prototypes 10 degrees apart");
      k.visual_prototype.resize(width);
      for (Index i = 0; i < width; ++i) k.visual_prototype(i) = normal(rng);
      const bool separated = std::all_of(concepts.begin(), concepts.end(), [&](const Concept& o) {
        const float cos = k.visual_prototype.dot(o.visual_prototype) /
                          (k.visual_prototype.norm() * o.visual_prototype.norm());
        return cos < max_cos;
      });
      if (separated) break;
    }
    for (Index j = 0; j < spec.tokens_per_concept; ++j) {
      k.vocab_tokens.push_back(static_cast<Token>(vocab_ids::kFirstConcept + c * spec.tokens_per_concept + j));
    }
    concepts.push_back(std::move(k));
  }
  return concepts;
}

// Segment lengths summing to `total`, each at least `min_len`.
std::vector<Index> segment_lengths(Index total, Index count, Index min_len, std::mt19937_64& rng) {
  std::vector<Index> lengths(static_cast<std::size_t>(count), min_len);
  std::uniform_int_distribution<Index> pick(0, count - 1);
  for (Index extra = total - count * min_len; extra > 0; --extra) lengths[static_cast<std::size_t>(pick(rng))] += 1;
  return lengths;
}

template <typename T>
const T& choose(const std::vector<T>& v, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, v.size() - 1);
  return v[pick(rng)];
}

}  // namespace

void CorpusSpec::validate() const {
  if (n_concepts < 1 || n_train < 0 || n_test < 0 || frames_per_video < 1 ||
      segments_per_video < 1 || candidates < 1 || tokens_per_concept < 1 || static_dim < 0 ||
      motion_dim < 0 || static_dim + motion_dim < 1) {
    throw ConfigError("corpus spec: sizes must be positive");
  }
  if (!(noise_sigma >= 0)) throw ConfigError("corpus spec: noise_sigma must be >= 0");
  if (candidates > n_concepts) {
    throw ConfigError("corpus spec: " + std::to_string(candidates) + " candidates exceed " +
                      std::to_string(n_concepts) + " concepts");
  }
  if (segments_per_video > n_concepts) {
    throw ConfigError("corpus spec: more segments per video than concepts");
  }
  if (segments_per_video > frames_per_video) {
    throw ConfigError("corpus spec: more segments than frames");
  }
  if (segments_per_video > kOrdinals) throw ConfigError("corpus spec: at most 8 segments per video");
  if (task == TaskKind::kQa) {
    if (candidates < 2) throw ConfigError("corpus spec: qa needs at least two candidates");
    if (n_concepts - segments_per_video < candidates - 1) {
      throw ConfigError("corpus spec: not enough absent concepts for the wrong candidates");
    }
  }
  if (vocab_ids::kFirstConcept + n_concepts * tokens_per_concept > vocab_size) {
    throw ConfigError("corpus spec: vocabulary of " + std::to_string(vocab_size) +
                      " is too small for the concept words");
  }
}

CorpusSpec CorpusSpec::from_config(const KeyValueConfig& cfg) {
  static const std::vector<std::string> known = {
      "n_concepts", "n_train",  "n_test",     "frames_per_video", "segments_per_video",
      "noise_sigma", "task",    "candidates", "tokens_per_concept", "vocab_size",
      "static_dim", "motion_dim", "seed"};
  if (auto unknown = cfg.unknown_keys(known); !unknown.empty()) {
    throw ConfigError("corpus spec: unknown key '" + unknown.front() + "'");
  }
  CorpusSpec s;
  s.n_concepts = cfg.get_int("n_concepts", s.n_concepts);
  s.n_train = cfg.get_int("n_train", s.n_train);
  s.n_test = cfg.get_int("n_test", s.n_test);
  s.frames_per_video = cfg.get_int("frames_per_video", s.frames_per_video);
  s.segments_per_video = cfg.get_int("segments_per_video", s.segments_per_video);
  s.noise_sigma = cfg.get_double("noise_sigma", s.noise_sigma);
  s.task = parse_task(cfg.get_string("task", task_name(s.task)));
  s.candidates = cfg.get_int("candidates", s.candidates);
  s.tokens_per_concept = cfg.get_int("tokens_per_concept", s.tokens_per_concept);
  s.vocab_size = cfg.get_int("vocab_size", s.vocab_size);
  s.static_dim = cfg.get_int("static_dim", s.static_dim);
  s.motion_dim = cfg.get_int("motion_dim", s.motion_dim);
  s.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<long long>(s.seed)));
  s.validate();
  return s;
}

KeyValueConfig CorpusSpec::to_config() const {
  KeyValueConfig c;
  c.set("n_concepts", std::to_string(n_concepts));
  c.set("n_train", std::to_string(n_train));
  c.set("n_test", std::to_string(n_test));
  c.set("frames_per_video", std::to_string(frames_per_video));
  c.set("segments_per_video", std::to_string(segments_per_video));
  c.set("noise_sigma", format_double(noise_sigma));
  c.set("task", task_name(task));
  c.set("candidates", std::to_string(candidates));
  c.set("tokens_per_concept", std::to_string(tokens_per_concept));
  c.set("vocab_size", std::to_string(vocab_size));
  c.set("static_dim", std::to_string(static_dim));
  c.set("motion_dim", std::to_string(motion_dim));
  c.set("seed", std::to_string(seed));
  return c;
}

SyntheticCorpus generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  SyntheticCorpus corpus;
  corpus.concepts = make_concepts(spec, rng);
  const auto vocab = build_vocab(spec);
  for (Dataset* d : {&corpus.train, &corpus.test}) {
    d->static_dim = spec.static_dim;
    d->motion_dim = spec.motion_dim;
    d->task = spec.task;
    d->vocab = vocab;
  }
  std::normal_distribution<float> noise(0.0f, static_cast<float>(spec.noise_sigma));
  const Index width = spec.static_dim + spec.motion_dim;
  const Index min_len = std::max<Index>(1, spec.frames_per_video / (2 * spec.segments_per_video));
  std::vector<int> all_concepts(static_cast<std::size_t>(spec.n_concepts));
  std::iota(all_concepts.begin(), all_concepts.end(), 0);

  auto make_sample = [&](const std::string& id) {
    Sample s;
    s.id = id;
    s.task = spec.task;
    s.static_dim = spec.static_dim;
    s.motion_dim = spec.motion_dim;
    std::vector<int> order = all_concepts;
    std::shuffle(order.begin(), order.end(), rng);
    const std::vector<int> present(order.begin(), order.begin() + spec.segments_per_video);
    const std::vector<int> absent(order.begin() + spec.segments_per_video, order.end());
    const auto lengths = segment_lengths(spec.frames_per_video, spec.segments_per_video, min_len, rng);

    s.frames.resize(spec.frames_per_video, width);
    std::vector<int> frame_concept;
    std::vector<Span> spans;
    Index at = 0;
    for (std::size_t k = 0; k < present.size(); ++k) {
      const auto& proto = corpus.concepts[static_cast<std::size_t>(present[k])].visual_prototype;
      spans.push_back({at, at + lengths[k] - 1});
      for (Index f = 0; f < lengths[k]; ++f, ++at) {
        for (Index c = 0; c < width; ++c) {
          s.frames(at, c) = proto(c) + (spec.noise_sigma > 0 ? noise(rng) : 0.0f);
        }
        frame_concept.push_back(present[k]);
      }
    }
    auto word_for = [&](int concept_id) {
      return choose(corpus.concepts[static_cast<std::size_t>(concept_id)].vocab_tokens, rng);
    };
    std::uniform_int_distribution<std::size_t> pick_segment(0, present.size() - 1);
    switch (spec.task) {
      case TaskKind::kRetrieval: {
        s.tokens = {vocab_ids::kA, vocab_ids::kVideo, vocab_ids::kOf};
        for (std::size_t k = 0; k < present.size(); ++k) {
          if (k > 0) s.tokens.push_back(vocab_ids::kThen);
          s.tokens.push_back(word_for(present[k]));
        }
        break;
      }
      case TaskKind::kQa: {
        const std::size_t k = pick_segment(rng);
        s.tokens = {vocab_ids::kWhat, vocab_ids::kIs, vocab_ids::kShown, vocab_ids::kIn,
                    vocab_ids::kThe, static_cast<Token>(vocab_ids::kFirstOrdinal + static_cast<Token>(k)),
                    vocab_ids::kSegment, vocab_ids::kQuestionMark};
        std::vector<int> wrong = absent;
        std::shuffle(wrong.begin(), wrong.end(), rng);
        wrong.resize(static_cast<std::size_t>(spec.candidates - 1));
        QaAnnotation qa;
        std::uniform_int_distribution<Index> pick_slot(0, spec.candidates - 1);
        qa.correct_index = pick_slot(rng);
        std::size_t next_wrong = 0;
        for (Index c = 0; c < spec.candidates; ++c) {
          qa.candidates.push_back({c == qa.correct_index ? word_for(present[k]) : word_for(wrong[next_wrong++])});
        }
        qa.span = spans[k];
        s.qa = std::move(qa);
        break;
      }
      case TaskKind::kMoment: {
        const std::size_t k = pick_segment(rng);
        s.tokens = {vocab_ids::kFind, vocab_ids::kThe, vocab_ids::kMoment, vocab_ids::kOf,
                    word_for(present[k])};
        s.moment = spans[k];
        break;
      }
    }
    corpus.frame_concepts.push_back(std::move(frame_concept));
    return s;
  };

  auto id_of = [](const char* split, Index i) {
    std::ostringstream os;
    os << split << '-' << std::setw(6) << std::setfill('0') << i;
    return os.str();
  };
  for (Index i = 0; i < spec.n_train; ++i) corpus.train.samples.push_back(make_sample(id_of("train", i)));
  for (Index i = 0; i < spec.n_test; ++i) corpus.test.samples.push_back(make_sample(id_of("test", i)));
  return corpus;
}

}  // namespace mlva
