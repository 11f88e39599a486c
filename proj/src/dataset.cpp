// SPDX-License-Identifier: Apache-2.0
#include "mlva/dataset.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

namespace mlva {
namespace {

using nlohmann::json;

constexpr char kFeatureMagic[4] = {'M', 'L', 'V', 'A'};
constexpr std::uint32_t kFeatureVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "binary formats are written in host order and assume a little-endian host");

json span_json(const Span& s) { return json::array({s.start, s.end}); }

Span parse_span(const json& j) {
  if (!j.is_array() || j.size() != 2) throw DataError("span must be [start, end]");
  return {j[0].get<Index>(), j[1].get<Index>()};
}

json sample_json(const Sample& s, bool with_frames) {
  json j;
  j["id"] = s.id;
  j["task"] = task_name(s.task);
  j["tokens"] = s.tokens;
  j["num_frames"] = s.frames.rows();
  if (with_frames) {
    json frames = json::array();
    for (Index r = 0; r < s.frames.rows(); ++r) {
      json row = json::array();
      for (Index c = 0; c < s.frames.cols(); ++c) row.push_back(static_cast<double>(s.frames(r, c)));
      frames.push_back(std::move(row));
    }
    j["frames"] = std::move(frames);
  }
  if (s.qa) {
    j["candidates"] = s.qa->candidates;
    j["correct_index"] = s.qa->correct_index;
    if (s.qa->span) j["span"] = span_json(*s.qa->span);
  }
  if (s.moment) j["span"] = span_json(*s.moment);
  return j;
}

Matrix<float> parse_frames(const json& j, Index width) {
  if (!j.is_array() || j.empty()) throw DataError("frames must be a non-empty array of rows");
  Matrix<float> m(static_cast<Index>(j.size()), width);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const json& row = j[r];
    if (!row.is_array() || static_cast<Index>(row.size()) != width) {
      throw DataError("frame " + std::to_string(r) + " has width " +
                      std::to_string(row.is_array() ? row.size() : 0) + ", header declares " +
                      std::to_string(width));
    }
    for (std::size_t c = 0; c < row.size(); ++c) {
      m(static_cast<Index>(r), static_cast<Index>(c)) = static_cast<float>(row[c].get<double>());
    }
  }
  return m;
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw DataError(std::string("feature file truncated while reading ") + what);
  }
  return v;
}

void fnv(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
}

template <typename T>
void fnv_value(std::uint64_t& h, const T& v) {
  fnv(h, &v, sizeof(T));
}

}  // namespace

const char* task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kRetrieval: return "retrieval";
    case TaskKind::kQa: return "qa";
    case TaskKind::kMoment: return "moment";
  }
  return "unknown";
}

TaskKind parse_task(const std::string& name) {
  if (name == "retrieval") return TaskKind::kRetrieval;
  if (name == "qa") return TaskKind::kQa;
  if (name == "moment") return TaskKind::kMoment;
  throw ConfigError("unknown task kind '" + name + "' (expected retrieval, qa or moment)");
}

void Sample::validate(Index vocab_size) const {
  const std::string where = "sample '" + id + "': ";
  if (id.empty()) throw DataError("sample without id");
  if (frames.rows() < 1) throw DataError(where + "no frames");
  if (static_dim < 0 || motion_dim < 0 || frames.cols() != static_dim + motion_dim) {
    throw DataError(where + "frame width " + std::to_string(frames.cols()) +
                    " != static_dim + motion_dim (" + std::to_string(static_dim) + " + " +
                    std::to_string(motion_dim) + ")");
  }
  if (!frames.allFinite()) throw DataError(where + "non-finite frame feature");
  auto check_tokens = [&](const TokenSeq& seq, const char* what) {
    if (seq.empty()) throw DataError(where + "empty " + what);
    for (Token t : seq) {
      if (t < 0 || t >= vocab_size) {
        throw DataError(where + what + " token " + std::to_string(t) +
                        " outside vocabulary of size " + std::to_string(vocab_size));
      }
    }
  };
  check_tokens(tokens, "token sequence");
  switch (task) {
    case TaskKind::kRetrieval:
      if (qa || moment) throw DataError(where + "retrieval samples carry no annotation");
      break;
    case TaskKind::kQa:
      if (!qa) throw DataError(where + "qa sample without annotation");
      if (moment) throw DataError(where + "qa sample with a moment span");
      try {
        qa->validate(frame_count());
      } catch (const DataError& e) {
        throw DataError(where + e.what());
      }
      for (const auto& c : qa->candidates) check_tokens(c, "candidate");
      break;
    case TaskKind::kMoment:
      if (!moment) throw DataError(where + "moment sample without span");
      if (qa) throw DataError(where + "moment sample with a qa annotation");
      if (!moment->valid(frame_count())) throw DataError(where + "span outside video");
      break;
  }
}

bool operator==(const Sample& a, const Sample& b) {
  auto same_qa = [](const std::optional<QaAnnotation>& x, const std::optional<QaAnnotation>& y) {
    if (x.has_value() != y.has_value()) return false;
    if (!x) return true;
    return x->candidates == y->candidates && x->correct_index == y->correct_index &&
           x->span == y->span;
  };
  const bool same_frames =
      a.frames.rows() == b.frames.rows() && a.frames.cols() == b.frames.cols() &&
      std::memcmp(a.frames.data(), b.frames.data(),
                  static_cast<std::size_t>(a.frames.size()) * sizeof(float)) == 0;
  return a.id == b.id && same_frames && a.static_dim == b.static_dim &&
         a.motion_dim == b.motion_dim && a.tokens == b.tokens && a.task == b.task &&
         same_qa(a.qa, b.qa) && a.moment == b.moment;
}

const Sample& Dataset::find(const std::string& id) const {
  for (const auto& s : samples) {
    if (s.id == id) return s;
  }
  throw DataError("no sample with id '" + id + "'");
}

void write_dataset(const Dataset& data, const std::filesystem::path& path,
                   const std::string& features_file) {
  if (!features_file.empty()) {
    write_feature_file(path.parent_path() / features_file, data.static_dim, data.motion_dim, data.samples);
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  json header{{"version", Dataset::kVersion},       {"static_dim", data.static_dim},
              {"motion_dim", data.motion_dim},      {"vocab_size", data.vocab_size()},
              {"task", task_name(data.task)},       {"vocab", data.vocab},
              {"num_samples", data.samples.size()}};
  if (!features_file.empty()) header["features"] = features_file;
  out << header.dump() << '\n';
  for (const auto& s : data.samples) out << sample_json(s, features_file.empty()).dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  Dataset data;
  std::string line;
  long line_no = 0;
  std::optional<FeatureFile> features;
  std::set<std::string> ids;
  auto parse_line = [&](const std::string& text) {
    try {
      return json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed record: ") + e.what(), line_no);
    }
  };
  if (!std::getline(in, line)) throw ParseError("missing header", 1);
  ++line_no;
  try {
    const json header = parse_line(line);
    if (header.value("version", -1) != Dataset::kVersion) {
      throw ParseError("unsupported dataset version", line_no);
    }
    data.static_dim = header.at("static_dim").get<Index>();
    data.motion_dim = header.at("motion_dim").get<Index>();
    data.task = parse_task(header.at("task").get<std::string>());
    data.vocab = header.at("vocab").get<std::vector<std::string>>();
    if (header.at("vocab_size").get<Index>() != data.vocab_size()) {
      throw ParseError("vocab_size disagrees with the vocabulary list", line_no);
    }
    if (header.contains("features")) {
      features = read_feature_file(path.parent_path() / header["features"].get<std::string>());
      if (features->static_dim != data.static_dim || features->motion_dim != data.motion_dim) {
        throw DataError("feature file dimensions disagree with the dataset header");
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad header: ") + e.what(), line_no);
  } catch (const ConfigError& e) {
    throw ParseError(e.what(), line_no);
  }
  const Index width = data.static_dim + data.motion_dim;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const json j = parse_line(line);
    Sample s;
    try {
      s.id = j.at("id").get<std::string>();
      s.task = parse_task(j.at("task").get<std::string>());
      s.static_dim = data.static_dim;
      s.motion_dim = data.motion_dim;
      s.tokens = j.at("tokens").get<TokenSeq>();
      if (j.contains("frames")) {
        s.frames = parse_frames(j["frames"], width);
      } else if (features) {
        auto it = features->frames.find(s.id);
        if (it == features->frames.end()) throw DataError("no features for sample '" + s.id + "'");
        s.frames = it->second;
      } else {
        throw DataError("sample '" + s.id + "' has no frames and no feature file is declared");
      }
      if (j.contains("num_frames") && j["num_frames"].get<Index>() != s.frames.rows()) {
        throw DataError("num_frames disagrees with the frame rows");
      }
      if (s.task == TaskKind::kQa) {
        QaAnnotation qa;
        qa.candidates = j.at("candidates").get<std::vector<TokenSeq>>();
        qa.correct_index = j.at("correct_index").get<Index>();
        if (j.contains("span")) qa.span = parse_span(j["span"]);
        s.qa = std::move(qa);
      } else if (s.task == TaskKind::kMoment) {
        s.moment = parse_span(j.at("span"));
      }
      if (s.task != data.task) throw DataError("sample task differs from the dataset task");
      s.validate(data.vocab_size());
      if (!ids.insert(s.id).second) throw DataError("duplicate sample id '" + s.id + "'");
    } catch (const ParseError&) {
      throw;
    } catch (const json::exception& e) {
      throw ParseError(e.what(), line_no);
    } catch (const Error& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
    data.samples.push_back(std::move(s));
  }
  return data;
}

void write_feature_file(const std::filesystem::path& path, Index static_dim, Index motion_dim,
                        const std::vector<Sample>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kFeatureMagic, 4);
  write_pod(out, kFeatureVersion);
  write_pod(out, static_cast<std::uint32_t>(static_dim));
  write_pod(out, static_cast<std::uint32_t>(motion_dim));
  write_pod(out, static_cast<std::uint64_t>(samples.size()));
  std::uint64_t offset = 0;
  for (const auto& s : samples) {
    if (s.frames.cols() != static_dim + motion_dim) {
      throw DataError("sample '" + s.id + "' width disagrees with the feature header");
    }
    write_pod(out, static_cast<std::uint32_t>(s.id.size()));
    out.write(s.id.data(), static_cast<std::streamsize>(s.id.size()));
    write_pod(out, offset);
    write_pod(out, static_cast<std::uint32_t>(s.frames.rows()));
    offset += static_cast<std::uint64_t>(s.frames.size());
  }
  for (const auto& s : samples) {
    out.write(reinterpret_cast<const char*>(s.frames.data()),
              static_cast<std::streamsize>(s.frames.size() * sizeof(float)));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

FeatureFile read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kFeatureMagic, 4) != 0) {
    throw DataError(path.string() + ": not an MLVA feature file");
  }
  if (read_pod<std::uint32_t>(in, "version") != kFeatureVersion) {
    throw DataError(path.string() + ": unsupported feature file version");
  }
  FeatureFile f;
  f.static_dim = read_pod<std::uint32_t>(in, "static_dim");
  f.motion_dim = read_pod<std::uint32_t>(in, "motion_dim");
  const auto count = read_pod<std::uint64_t>(in, "sample count");
  f.manifest.reserve(count);
  for (std::uint64_t k = 0; k < count; ++k) {
    FeatureManifestEntry e;
    const auto len = read_pod<std::uint32_t>(in, "id length");
    e.id.resize(len);
    if (!in.read(e.id.data(), len)) throw DataError("feature file truncated in manifest");
    e.offset = read_pod<std::uint64_t>(in, "offset");
    e.frames = read_pod<std::uint32_t>(in, "frame count");
    f.manifest.push_back(std::move(e));
  }
  const auto payload_start = in.tellg();
  const Index width = f.static_dim + f.motion_dim;
  for (const auto& e : f.manifest) {
    Matrix<float> m(static_cast<Index>(e.frames), width);
    in.seekg(payload_start + static_cast<std::streamoff>(e.offset * sizeof(float)));
    if (!in.read(reinterpret_cast<char*>(m.data()),
                 static_cast<std::streamsize>(m.size() * sizeof(float)))) {
      throw DataError("feature file truncated in payload of '" + e.id + "'");
    }
    f.frames.emplace(e.id, std::move(m));
  }
  return f;
}

std::vector<Index> subsample_indices(Index frames, Index cap) {
  std::vector<Index> idx;
  const Index n = std::min(frames, cap);
  idx.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) idx.push_back(frames <= cap ? i : (i * frames) / cap);
  return idx;
}

void cap_frames(Sample& sample, Index cap) {
  if (cap < 1) throw ConfigError("frame cap must be positive");
  if (sample.frames.rows() <= cap) return;
  const auto keep = subsample_indices(sample.frames.rows(), cap);
  Matrix<float> kept(static_cast<Index>(keep.size()), sample.frames.cols());
  for (std::size_t i = 0; i < keep.size(); ++i) kept.row(static_cast<Index>(i)) = sample.frames.row(keep[i]);
  // Kept frame k stands for original frames [keep[k], keep[k+1]).
  auto remap = [&](const Span& s) {
    auto owner = [&](Index f) {
      Index k = 0;
      while (k + 1 < static_cast<Index>(keep.size()) && keep[static_cast<std::size_t>(k + 1)] <= f) ++k;
      return k;
    };
    return Span{owner(s.start), owner(s.end)};
  };
  if (sample.qa && sample.qa->span) sample.qa->span = remap(*sample.qa->span);
  if (sample.moment) sample.moment = remap(*sample.moment);
  sample.frames = std::move(kept);
}

std::uint64_t checksum(const std::vector<Sample>& samples) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& s : samples) {
    fnv(h, s.id.data(), s.id.size());
    fnv_value(h, s.frames.rows());
    fnv_value(h, s.frames.cols());
    fnv(h, s.frames.data(), static_cast<std::size_t>(s.frames.size()) * sizeof(float));
    fnv(h, s.tokens.data(), s.tokens.size() * sizeof(Token));
    fnv_value(h, static_cast<int>(s.task));
    if (s.qa) {
      for (const auto& c : s.qa->candidates) {
        fnv_value(h, c.size());
        fnv(h, c.data(), c.size() * sizeof(Token));
      }
      fnv_value(h, s.qa->correct_index);
      if (s.qa->span) {
        fnv_value(h, s.qa->span->start);
        fnv_value(h, s.qa->span->end);
      }
    }
    if (s.moment) {
      fnv_value(h, s.moment->start);
      fnv_value(h, s.moment->end);
    }
  }
  return h;
}

}  // namespace mlva
