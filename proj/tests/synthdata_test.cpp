// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <string>

#include <json.hpp>

#include "mlva/dataset.hpp"
#include "mlva/synthdata.hpp"

namespace mlva {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("mlva_synth_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

CorpusSpec small_spec(TaskKind task, std::uint64_t seed = 3) {
  CorpusSpec s;
  s.task = task;
  s.n_train = 40;
  s.n_test = 10;
  s.frames_per_video = 12;
  s.static_dim = 6;
  s.motion_dim = 3;
  s.seed = seed;
  return s;
}

void write_lines(const fs::path& p, const std::vector<std::string>& lines) {
  std::ofstream out(p);
  for (const auto& l : lines) out << l << '\n';
}

TEST(Generator, ZeroNoiseFramesEqualPrototypes) {
  auto spec = small_spec(TaskKind::kQa);
  spec.noise_sigma = 0.0;
  auto corpus = generate_corpus(spec);
  for (std::size_t i = 0; i < corpus.train.samples.size(); ++i) {
    const auto& s = corpus.train.samples[i];
    for (Index f = 0; f < s.frame_count(); ++f) {
      const auto& proto = corpus.concepts[static_cast<std::size_t>(corpus.frame_concepts[i][static_cast<std::size_t>(f)])].visual_prototype;
      EXPECT_EQ(Eigen::VectorXf(s.frames.row(f).transpose()), proto);
    }
  }
}

TEST(Generator, SameSeedIsBitwiseIdentical) {
  for (auto task : {TaskKind::kQa, TaskKind::kRetrieval, TaskKind::kMoment}) {
    auto a = generate_corpus(small_spec(task));
    auto b = generate_corpus(small_spec(task));
    EXPECT_EQ(checksum(a.train.samples), checksum(b.train.samples));
    EXPECT_EQ(checksum(a.test.samples), checksum(b.test.samples));
    EXPECT_TRUE(a.train.samples == b.train.samples);
    auto c = generate_corpus(small_spec(task, 4));
    EXPECT_NE(checksum(a.train.samples), checksum(c.train.samples));
  }
}

TEST(Generator, NearestPrototypeRecoversEveryConceptWithoutNoise) {
  auto spec = small_spec(TaskKind::kMoment);
  spec.noise_sigma = 0.0;
  auto corpus = generate_corpus(spec);
  Index correct = 0, total = 0;
  for (std::size_t i = 0; i < corpus.train.samples.size(); ++i) {
    const auto& s = corpus.train.samples[i];
    for (Index f = 0; f < s.frame_count(); ++f) {
      Eigen::VectorXf x = s.frames.row(f).transpose();
      int best = 0;
      float best_d = std::numeric_limits<float>::infinity();
      for (const auto& c : corpus.concepts) {
        const float d = (x - c.visual_prototype).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c.id;
        }
      }
      correct += best == corpus.frame_concepts[i][static_cast<std::size_t>(f)];
      ++total;
    }
  }
  EXPECT_EQ(correct, total);
}

TEST(Generator, PrototypesAreSeparatedAndVocabulariesDisjoint) {
  auto corpus = generate_corpus(small_spec(TaskKind::kQa));
  std::set<Token> seen;
  for (std::size_t a = 0; a < corpus.concepts.size(); ++a) {
    for (Token t : corpus.concepts[a].vocab_tokens) EXPECT_TRUE(seen.insert(t).second);
    for (std::size_t b = a + 1; b < corpus.concepts.size(); ++b) {
      const auto& u = corpus.concepts[a].visual_prototype;
      const auto& v = corpus.concepts[b].visual_prototype;
      EXPECT_LT(u.dot(v) / (u.norm() * v.norm()), std::cos(10.0 * M_PI / 180.0));
    }
  }
}

TEST(Generator, QaCorrectCandidateNamesTheSpanConcept) {
  auto spec = small_spec(TaskKind::kQa);
  auto corpus = generate_corpus(spec);
  std::vector<const Sample*> all;
  for (const auto& s : corpus.train.samples) all.push_back(&s);
  for (const auto& s : corpus.test.samples) all.push_back(&s);
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto& s = *all[i];
    ASSERT_TRUE(s.qa && s.qa->span);
    EXPECT_EQ(static_cast<Index>(s.qa->candidates.size()), spec.candidates);
    const int concept_id = corpus.frame_concepts[i][static_cast<std::size_t>(s.qa->span->start)];
    // The span covers exactly one concept segment.
    for (Index f = s.qa->span->start; f <= s.qa->span->end; ++f) {
      EXPECT_EQ(corpus.frame_concepts[i][static_cast<std::size_t>(f)], concept_id);
    }
    const auto& vocab = corpus.concepts[static_cast<std::size_t>(concept_id)].vocab_tokens;
    for (Index c = 0; c < spec.candidates; ++c) {
      const Token t = s.qa->candidates[static_cast<std::size_t>(c)].front();
      const bool in_vocab = std::find(vocab.begin(), vocab.end(), t) != vocab.end();
      EXPECT_EQ(in_vocab, c == s.qa->correct_index);
    }
  }
}

TEST(Generator, MomentQueryNamesTheSpanConcept) {
  auto corpus = generate_corpus(small_spec(TaskKind::kMoment));
  for (std::size_t i = 0; i < corpus.train.samples.size(); ++i) {
    const auto& s = corpus.train.samples[i];
    ASSERT_TRUE(s.moment);
    const int concept_id = corpus.frame_concepts[i][static_cast<std::size_t>(s.moment->start)];
    const auto& vocab = corpus.concepts[static_cast<std::size_t>(concept_id)].vocab_tokens;
    EXPECT_NE(std::find(vocab.begin(), vocab.end(), s.tokens.back()), vocab.end());
    if (s.moment->start > 0) {
      EXPECT_NE(corpus.frame_concepts[i][static_cast<std::size_t>(s.moment->start - 1)], concept_id);
    }
  }
}

TEST(Generator, SplitsAreDisjointById) {
  auto corpus = generate_corpus(small_spec(TaskKind::kRetrieval));
  std::set<std::string> ids;
  for (const auto& s : corpus.train.samples) ids.insert(s.id);
  for (const auto& s : corpus.test.samples) EXPECT_EQ(ids.count(s.id), 0u);
  EXPECT_EQ(ids.size(), corpus.train.samples.size());
}

TEST(Generator, MoreCandidatesThanConceptsIsConfigError) {
  auto spec = small_spec(TaskKind::kQa);
  spec.candidates = spec.n_concepts + 1;
  EXPECT_THROW(generate_corpus(spec), ConfigError);
  spec = small_spec(TaskKind::kQa);
  spec.noise_sigma = -1.0;
  EXPECT_THROW(generate_corpus(spec), ConfigError);
}

TEST(Generator, SpecConfigRoundTrip) {
  auto spec = small_spec(TaskKind::kMoment, 99);
  spec.noise_sigma = 0.125;
  auto back = CorpusSpec::from_config(KeyValueConfig::parse(spec.to_config().dump()));
  EXPECT_EQ(back.to_config().dump(), spec.to_config().dump());
  auto bad = spec.to_config();
  bad.set("colour", "blue");
  EXPECT_THROW(CorpusSpec::from_config(bad), ConfigError);
}

TEST(DatasetIo, EmptySampleListRoundTrips) {
  TempDir dir;
  Dataset d = generate_corpus(small_spec(TaskKind::kQa)).train;
  d.samples.clear();
  write_dataset(d, dir / "empty.jsonl");
  std::ifstream in(dir / "empty.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 1);
  auto back = read_dataset(dir / "empty.jsonl");
  EXPECT_TRUE(back.samples.empty());
  EXPECT_EQ(back.vocab, d.vocab);
}

TEST(DatasetIo, SingleSampleRoundTripIsBitwise) {
  TempDir dir;
  Dataset d = generate_corpus(small_spec(TaskKind::kMoment)).train;
  d.samples.resize(1);
  d.samples[0].frames(0, 0) = 0.1f;  // not exactly representable in decimal
  d.samples[0].frames(0, 1) = 1e-38f;
  write_dataset(d, dir / "one.jsonl");
  auto back = read_dataset(dir / "one.jsonl");
  ASSERT_EQ(back.samples.size(), 1u);
  EXPECT_TRUE(back.samples[0] == d.samples[0]);
  EXPECT_EQ(std::memcmp(back.samples[0].frames.data(), d.samples[0].frames.data(),
                        sizeof(float) * static_cast<std::size_t>(d.samples[0].frames.size())),
            0);
}

TEST(DatasetIo, HundredSampleCorpusChecksumMatches) {
  TempDir dir;
  for (auto task : {TaskKind::kQa, TaskKind::kRetrieval, TaskKind::kMoment}) {
    auto spec = small_spec(task);
    spec.n_train = 100;
    Dataset d = generate_corpus(spec).train;
    write_dataset(d, dir / "corpus.jsonl");
    auto back = read_dataset(dir / "corpus.jsonl");
    EXPECT_EQ(checksum(back.samples), checksum(d.samples));
    write_dataset(d, dir / "binary.jsonl", "binary.mlva");
    auto bin = read_dataset(dir / "binary.jsonl");
    EXPECT_EQ(checksum(bin.samples), checksum(d.samples));
  }
}

TEST(DatasetIo, MalformedLineReportsLineNumber) {
  TempDir dir;
  Dataset d = generate_corpus(small_spec(TaskKind::kRetrieval)).train;
  d.samples.resize(2);
  write_dataset(d, dir / "ok.jsonl");
  std::ifstream in(dir / "ok.jsonl");
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  lines[2] = "{\"id\": \"broken\"";
  write_lines(dir / "bad.jsonl", lines);
  try {
    read_dataset(dir / "bad.jsonl");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(DatasetIo, WidthMismatchIsDataError) {
  TempDir dir;
  Dataset d = generate_corpus(small_spec(TaskKind::kRetrieval)).train;
  d.samples.resize(1);
  write_dataset(d, dir / "ok.jsonl");
  std::ifstream in(dir / "ok.jsonl");
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  auto header = nlohmann::json::parse(lines[0]);
  header["static_dim"] = 7;
  lines[0] = header.dump();
  write_lines(dir / "wide.jsonl", lines);
  EXPECT_THROW(read_dataset(dir / "wide.jsonl"), DataError);
}

TEST(DatasetIo, InvalidSamplesAreRejectedNotClamped) {
  TempDir dir;
  Dataset d = generate_corpus(small_spec(TaskKind::kQa)).train;
  d.samples.resize(1);
  write_dataset(d, dir / "ok.jsonl");
  std::ifstream in(dir / "ok.jsonl");
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  auto mutate = [&](const std::function<void(nlohmann::json&)>& f) {
    auto j = nlohmann::json::parse(lines[1]);
    f(j);
    write_lines(dir / "bad.jsonl", {lines[0], j.dump()});
  };
  mutate([](nlohmann::json& j) { j["correct_index"] = 9; });
  EXPECT_THROW(read_dataset(dir / "bad.jsonl"), DataError);
  mutate([](nlohmann::json& j) { j["span"] = {3, 99}; });
  EXPECT_THROW(read_dataset(dir / "bad.jsonl"), DataError);
  mutate([](nlohmann::json& j) { j["tokens"] = {2, 100000}; });
  EXPECT_THROW(read_dataset(dir / "bad.jsonl"), DataError);
  mutate([](nlohmann::json& j) { j["task"] = "moment"; });
  EXPECT_THROW(read_dataset(dir / "bad.jsonl"), DataError);
}

TEST(DatasetIo, MissingFileIsIoError) {
  EXPECT_THROW(read_dataset("/nonexistent/dir/data.jsonl"), IoError);
}

TEST(FrameCap, SubsamplingIsUniformAndIncreasing) {
  EXPECT_EQ(subsample_indices(5, 8), (std::vector<Index>{0, 1, 2, 3, 4}));
  EXPECT_EQ(subsample_indices(10, 4), (std::vector<Index>{0, 2, 5, 7}));
  for (Index frames = 1; frames < 200; frames += 7) {
    auto idx = subsample_indices(frames, 64);
    EXPECT_EQ(static_cast<Index>(idx.size()), std::min<Index>(frames, 64));
    for (std::size_t i = 1; i < idx.size(); ++i) EXPECT_LT(idx[i - 1], idx[i]);
    EXPECT_LT(idx.back(), frames);
  }
}

TEST(FrameCap, SpansAreRemappedOntoKeptFrames) {
  Sample s;
  s.id = "x";
  s.task = TaskKind::kMoment;
  s.static_dim = 1;
  s.motion_dim = 0;
  s.frames = Matrix<float>(10, 1);
  for (Index i = 0; i < 10; ++i) s.frames(i, 0) = static_cast<float>(i);
  s.tokens = {2};
  s.moment = Span{3, 6};
  cap_frames(s, 4);  // keeps 0, 2, 5, 7
  EXPECT_EQ(s.frame_count(), 4);
  EXPECT_EQ(s.frames(2, 0), 5.0f);
  EXPECT_EQ(*s.moment, (Span{1, 2}));
}

}  // namespace
}  // namespace mlva
