// Copyright 2026 The costa-workbench Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Synthetic code-switched speech translation corpus.
//
// Each utterance is a sequence of tagged source tokens drawn from a matrix
// and an embedded vocabulary. Every token emits a random number of acoustic
// frames equal to a fixed per-token prototype plus Gaussian noise. The
// reference translation maps each maximal run of matrix tokens through a
// bijective lexicon and reverses it in place; embedded tokens are copied.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "costa/binary_io.hpp"
#include "costa/errors.hpp"
#include "costa/keyvalue.hpp"
#include "costa/metrics.hpp"
#include "costa/numerics/array.hpp"
#include "costa/numerics/random.hpp"
#include "costa/text.hpp"

namespace costa::corpus {

struct Range {
  int min = 0;
  int max = 0;
  friend bool operator==(const Range&, const Range&) = default;
};

struct CorpusConfig {
  int matrix_vocab_size = 40;
  int embedded_vocab_size = 20;
  Range utterance_length{4, 12};
  double target_cmi = 0.25;
  Range frames_per_token{8, 16};
  int feature_dim = 16;
  double frame_noise_std = 0.1;
  std::uint64_t seed = 0;
  std::size_t size = 500;

  void validate() const {
    if (!(target_cmi >= 0.0 && target_cmi <= 0.5))
      throw InvalidArgument("target CMI must lie in [0, 0.5], got " + format_double(target_cmi));
    if (matrix_vocab_size <= 0 || embedded_vocab_size <= 0)
      throw InvalidArgument("vocabulary sizes must be positive");
    if (utterance_length.min < 1 || utterance_length.min > utterance_length.max)
      throw InvalidArgument("utterance length range must satisfy 1 <= min <= max");
    if (frames_per_token.min < 1 || frames_per_token.min > frames_per_token.max)
      throw InvalidArgument("frames-per-token range must satisfy 1 <= min <= max");
    if (feature_dim <= 0) throw InvalidArgument("feature_dim must be positive");
    if (!(frame_noise_std >= 0.0)) throw InvalidArgument("frame_noise_std must be non-negative");
  }

  KeyValues to_key_values() const {
    return {{"matrix_vocab_size", std::to_string(matrix_vocab_size)},
            {"embedded_vocab_size", std::to_string(embedded_vocab_size)},
            {"min_length", std::to_string(utterance_length.min)},
            {"max_length", std::to_string(utterance_length.max)},
            {"cmi", format_double(target_cmi)},
            {"min_frames", std::to_string(frames_per_token.min)},
            {"max_frames", std::to_string(frames_per_token.max)},
            {"feature_dim", std::to_string(feature_dim)},
            {"frame_noise", format_double(frame_noise_std)},
            {"seed", std::to_string(seed)},
            {"n", std::to_string(size)}};
  }

  /// Overrides fields named in `kv`; unknown keys are ignored.
  void apply(const KeyValues& kv) {
    auto get = [&](const char* k) -> const std::string* {
      auto it = kv.find(k);
      return it == kv.end() ? nullptr : &it->second;
    };
    if (auto v = get("matrix_vocab_size")) matrix_vocab_size = static_cast<int>(parse_int("matrix_vocab_size", *v));
    if (auto v = get("embedded_vocab_size")) embedded_vocab_size = static_cast<int>(parse_int("embedded_vocab_size", *v));
    if (auto v = get("min_length")) utterance_length.min = static_cast<int>(parse_int("min_length", *v));
    if (auto v = get("max_length")) utterance_length.max = static_cast<int>(parse_int("max_length", *v));
    if (auto v = get("cmi")) target_cmi = parse_double("cmi", *v);
    if (auto v = get("min_frames")) frames_per_token.min = static_cast<int>(parse_int("min_frames", *v));
    if (auto v = get("max_frames")) frames_per_token.max = static_cast<int>(parse_int("max_frames", *v));
    if (auto v = get("feature_dim")) feature_dim = static_cast<int>(parse_int("feature_dim", *v));
    if (auto v = get("frame_noise")) frame_noise_std = parse_double("frame_noise", *v);
    if (auto v = get("seed")) seed = static_cast<std::uint64_t>(parse_int("seed", *v));
    if (auto v = get("n")) size = static_cast<std::size_t>(parse_int("n", *v));
  }

  friend bool operator==(const CorpusConfig&, const CorpusConfig&) = default;
};

inline std::string matrix_token(int i) { return "m" + std::to_string(i); }
inline std::string embedded_token(int i) { return "e" + std::to_string(i); }
inline std::string target_token(int i) { return "t" + std::to_string(i); }

/// Source vocabulary: matrix tokens, then embedded tokens.
inline Vocabulary source_vocabulary(const CorpusConfig& c) {
  Vocabulary v;
  for (int i = 0; i < c.matrix_vocab_size; ++i) v.add(matrix_token(i));
  for (int i = 0; i < c.embedded_vocab_size; ++i) v.add(embedded_token(i));
  return v;
}

/// Target content vocabulary: the lexicon image, then the embedded tokens.
inline Vocabulary target_vocabulary(const CorpusConfig& c) {
  Vocabulary v;
  for (int i = 0; i < c.matrix_vocab_size; ++i) v.add(target_token(i));
  for (int i = 0; i < c.embedded_vocab_size; ++i) v.add(embedded_token(i));
  return v;
}

/// Bijective matrix-token lexicon m<i> -> t<i>.
class Lexicon {
 public:
  explicit Lexicon(int matrix_vocab_size) : size_(matrix_vocab_size) {}

  std::string translate(const std::string& matrix) const {
    if (matrix.size() >= 2 && matrix[0] == 'm') {
      int i = -1;
      auto [ptr, ec] = std::from_chars(matrix.data() + 1, matrix.data() + matrix.size(), i);
      if (ec == std::errc() && ptr == matrix.data() + matrix.size() && i >= 0 && i < size_ &&
          matrix == matrix_token(i))
        return target_token(i);
    }
    throw InvalidArgument("lexicon has no entry for matrix token '" + matrix + "'");
  }

 private:
  int size_;
};

/// Deterministic reference translation: each maximal matrix run is mapped
/// through the lexicon and reversed; embedded tokens stay in place.
inline Tokens reference_translate(const TaggedTokens& source, const Lexicon& lexicon) {
  Tokens out;
  out.reserve(source.size());
  std::size_t i = 0;
  while (i < source.size()) {
    if (source[i].lang == Lang::kEmbedded) {
      out.push_back(source[i].text);
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < source.size() && source[j].lang == Lang::kMatrix) ++j;
    for (std::size_t k = j; k-- > i;) out.push_back(lexicon.translate(source[k].text));
    i = j;
  }
  return out;
}

struct Utterance {
  std::string id;
  Array<float> frames;  // T x feature_dim
  TaggedTokens source;
  Tokens target;
  std::vector<std::size_t> gold_ends;  // 1-based inclusive span ends

  std::size_t num_frames() const { return frames.rows(); }
  friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct CorpusManifest {
  CorpusConfig config;
  std::vector<Utterance> records;
  double measured_cmi = 0.0;

  std::size_t size() const { return records.size(); }
};

inline double measure_cmi(const std::vector<Utterance>& records) {
  std::vector<TaggedTokens> sources;
  sources.reserve(records.size());
  for (const auto& u : records) sources.push_back(u.source);
  return metrics::corpus_cmi(sources);
}

/// Prototype frame vector per source-vocabulary entry (rows follow
/// source_vocabulary order). Rows are redrawn until pairwise distinct.
inline Array<float> prototypes(const CorpusConfig& c) {
  const std::size_t v = static_cast<std::size_t>(c.matrix_vocab_size + c.embedded_vocab_size);
  const std::size_t d = static_cast<std::size_t>(c.feature_dim);
  std::mt19937_64 rng(mix_seed(c.seed, 0x70726f746fULL));
  std::normal_distribution<float> normal(0.0f, 1.0f);
  Array<float> protos = Array<float>::matrix(v, d);
  for (std::size_t r = 0; r < v; ++r) {
    for (;;) {
      for (std::size_t k = 0; k < d; ++k) protos(r, k) = normal(rng);
      bool distinct = true;
      for (std::size_t q = 0; q < r && distinct; ++q) {
        float dist = 0.0f;
        for (std::size_t k = 0; k < d; ++k) dist += (protos(r, k) - protos(q, k)) * (protos(r, k) - protos(q, k));
        distinct = dist > 1e-6f;
      }
      if (distinct) break;
    }
  }
  return protos;
}

inline std::string utterance_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "utt%05zu", index);
  return buf;
}

/// Generates utterance `index` from its own seed stream.
inline Utterance generate_utterance(const CorpusConfig& c, const Array<float>& protos, const Vocabulary& vocab,
                                    const Lexicon& lexicon, std::size_t index) {
  std::mt19937_64 rng(mix_seed(c.seed, index + 1));
  Utterance u;
  u.id = utterance_id(index);
  const int length = std::uniform_int_distribution<int>(c.utterance_length.min, c.utterance_length.max)(rng);
  // Embedded count is target * length rounded stochastically, so the
  // expected per-utterance CMI equals the target (CMI <= 0.5 keeps the
  // embedded side the minority).
  const double u01 = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  int embedded = static_cast<int>(std::floor(c.target_cmi * length + u01));
  embedded = std::clamp(embedded, 0, length / 2 + (length % 2));
  std::vector<int> positions(static_cast<std::size_t>(length));
  for (int i = 0; i < length; ++i) positions[static_cast<std::size_t>(i)] = i;
  std::shuffle(positions.begin(), positions.end(), rng);
  std::vector<bool> is_embedded(static_cast<std::size_t>(length), false);
  for (int i = 0; i < embedded; ++i) is_embedded[static_cast<std::size_t>(positions[static_cast<std::size_t>(i)])] = true;

  std::uniform_int_distribution<int> pick_m(0, c.matrix_vocab_size - 1);
  std::uniform_int_distribution<int> pick_e(0, c.embedded_vocab_size - 1);
  std::uniform_int_distribution<int> pick_frames(c.frames_per_token.min, c.frames_per_token.max);
  std::vector<int> frame_counts;
  for (int i = 0; i < length; ++i) {
    if (is_embedded[static_cast<std::size_t>(i)])
      u.source.push_back({embedded_token(pick_e(rng)), Lang::kEmbedded});
    else
      u.source.push_back({matrix_token(pick_m(rng)), Lang::kMatrix});
    frame_counts.push_back(pick_frames(rng));
  }
  std::size_t total = 0;
  for (int f : frame_counts) {
    total += static_cast<std::size_t>(f);
    u.gold_ends.push_back(total);
  }
  const std::size_t d = static_cast<std::size_t>(c.feature_dim);
  u.frames = Array<float>::matrix(total, d);
  std::normal_distribution<double> noise(0.0, c.frame_noise_std);
  std::size_t row = 0;
  for (std::size_t t = 0; t < u.source.size(); ++t) {
    const auto proto = protos.row(static_cast<std::size_t>(vocab.id(u.source[t].text)));
    for (int f = 0; f < frame_counts[t]; ++f, ++row) {
      for (std::size_t k = 0; k < d; ++k) {
        const double n = c.frame_noise_std > 0.0 ? noise(rng) : 0.0;
        u.frames(row, k) = static_cast<float>(proto[k] + n);
      }
    }
  }
  u.target = reference_translate(u.source, lexicon);
  return u;
}

/// Utterances `first` .. `first + count - 1` of the stream defined by
/// `config` (same prototypes and lexicon for any range).
inline CorpusManifest generate_range(const CorpusConfig& config, std::size_t first, std::size_t count,
                                     unsigned workers = 1) {
  config.validate();
  const Array<float> protos = prototypes(config);
  const Vocabulary vocab = source_vocabulary(config);
  const Lexicon lexicon(config.matrix_vocab_size);
  CorpusManifest m;
  m.config = config;
  m.config.size = count;
  m.records.resize(count);
  workers = std::max(1u, workers);
  auto work = [&](unsigned w) {
    for (std::size_t i = w; i < count; i += workers)
      m.records[i] = generate_utterance(config, protos, vocab, lexicon, first + i);
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  m.measured_cmi = measure_cmi(m.records);
  return m;
}

/// Deterministic in the config alone; `workers` only changes wall time.
inline CorpusManifest generate_corpus(const CorpusConfig& config, unsigned workers = 1) {
  return generate_range(config, 0, config.size, workers);
}

/// `count` utterances disjoint from `generate_corpus(config)`, drawn from the
/// same source (indices after the training corpus).
inline CorpusManifest generate_heldout(const CorpusConfig& config, std::size_t count, unsigned workers = 1) {
  return generate_range(config, config.size, count, workers);
}

// ---------------------------------------------------------------------------
// On-disk format: corpus.tsv + frames/<id>.cstf + corpus.cfg

inline constexpr char kFrameMagic[4] = {'C', 'S', 'T', 'F'};

inline void write_frames(const std::filesystem::path& path, const Array<float>& frames) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(kFrameMagic, 4);
  io::put_u32(out, static_cast<std::uint32_t>(frames.rows()));
  io::put_u32(out, static_cast<std::uint32_t>(frames.cols()));
  for (float f : frames.values()) io::put_f32(out, f);
  if (!out) throw Error("failed writing " + path.string());
}

inline Array<float> read_frames(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open frame file " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kFrameMagic, 4) != 0)
    throw FormatError("frame file " + path.string() + ": bad magic (expected CSTF)");
  std::uint32_t t = 0, d = 0;
  if (!io::get_u32(in, t) || !io::get_u32(in, d)) throw FormatError("frame file " + path.string() + ": truncated header");
  if (t == 0 || d == 0) throw FormatError("frame file " + path.string() + ": empty frame matrix");
  std::vector<float> data(static_cast<std::size_t>(t) * d);
  for (float& f : data)
    if (!io::get_f32(in, f)) throw FormatError("frame file " + path.string() + ": truncated data");
  return Array<float>::matrix(t, d, std::move(data));
}

inline std::string frames_file(const Utterance& u) { return "frames/" + u.id + ".cstf"; }

inline std::string format_source(const TaggedTokens& src) {
  std::string s;
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (i) s += ' ';
    s += src[i].text;
    s += ':';
    s += lang_code(src[i].lang);
  }
  return s;
}

inline std::string join(const Tokens& toks, char sep = ' ') {
  std::string s;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) s += sep;
    s += toks[i];
  }
  return s;
}

inline std::string format_ends(const std::vector<std::size_t>& ends) {
  std::string s;
  for (std::size_t i = 0; i < ends.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(ends[i]);
  }
  return s;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

inline void write_manifest(const CorpusManifest& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "frames");
  write_key_values(dir / "corpus.cfg", m.config.to_key_values());
  std::ofstream out(dir / "corpus.tsv");
  if (!out) throw Error("cannot write " + (dir / "corpus.tsv").string());
  for (const Utterance& u : m.records) {
    write_frames(dir / frames_file(u), u.frames);
    out << u.id << '\t' << frames_file(u) << '\t' << u.num_frames() << '\t' << format_source(u.source) << '\t'
        << join(u.target) << '\t' << format_ends(u.gold_ends) << '\n';
  }
  if (!out) throw Error("failed writing " + (dir / "corpus.tsv").string());
}

inline CorpusManifest read_manifest(const std::filesystem::path& dir) {
  CorpusManifest m;
  if (std::filesystem::exists(dir / "corpus.cfg")) m.config.apply(read_key_values(dir / "corpus.cfg"));
  std::ifstream in(dir / "corpus.tsv");
  if (!in) throw FormatError("cannot open " + (dir / "corpus.tsv").string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto bad = [&](const std::string& why) {
      return FormatError("corpus.tsv:" + std::to_string(lineno) + ": " + why);
    };
    const auto f = split(line, '\t');
    if (f.size() != 6) throw bad("expected 6 tab-separated fields, found " + std::to_string(f.size()));
    Utterance u;
    u.id = f[0];
    if (u.id.empty()) throw bad("empty id");
    std::size_t t = 0;
    try {
      t = static_cast<std::size_t>(parse_int("T", f[2]));
    } catch (const InvalidArgument&) {
      throw bad("frame count '" + f[2] + "' is not an integer");
    }
    for (const auto& item : split(f[3], ' ')) {
      const auto colon = item.rfind(':');
      if (colon == std::string::npos || colon == 0 || colon + 2 != item.size())
        throw bad("source item '" + item + "' is not token:TAG");
      const char tag = item.back();
      if (tag != 'M' && tag != 'E') throw bad("unknown language tag in '" + item + "'");
      u.source.push_back({item.substr(0, colon), tag == 'M' ? Lang::kMatrix : Lang::kEmbedded});
    }
    u.target = split(f[4], ' ');
    for (const auto& e : split(f[5], ',')) {
      try {
        u.gold_ends.push_back(static_cast<std::size_t>(parse_int("gold_alignment", e)));
      } catch (const InvalidArgument&) {
        throw bad("alignment index '" + e + "' is not an integer");
      }
    }
    if (u.gold_ends.size() != u.source.size()) throw bad("alignment length differs from source length");
    for (std::size_t i = 0; i < u.gold_ends.size(); ++i)
      if (u.gold_ends[i] == 0 || (i && u.gold_ends[i] <= u.gold_ends[i - 1]) || u.gold_ends[i] > t)
        throw bad("alignment indices must be increasing within [1, T]");
    u.frames = read_frames(dir / f[1]);
    if (u.frames.rows() != t)
      throw bad("frame file " + f[1] + " holds " + std::to_string(u.frames.rows()) + " frames, manifest says " +
                std::to_string(t));
    m.records.push_back(std::move(u));
  }
  m.config.size = m.records.size();
  m.measured_cmi = measure_cmi(m.records);
  return m;
}

}  // namespace costa::corpus
