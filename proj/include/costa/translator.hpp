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

// The full model: speech branch, shared source embeddings, fusion, and a
// transformer encoder-decoder over the target vocabulary. Also the three
// training objectives, scheduled sampling, greedy inference and checkpoints.

#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "costa/acoustic.hpp"
#include "costa/alignment.hpp"
#include "costa/binary_io.hpp"
#include "costa/fusion.hpp"
#include "costa/keyvalue.hpp"
#include "costa/text.hpp"

namespace costa {

inline constexpr const char* kBos = "<bos>";
inline constexpr const char* kEos = "<eos>";
inline constexpr const char* kPad = "<pad>";

struct TranslatorConfig {
  std::size_t encoder_blocks = 2;
  std::size_t decoder_blocks = 2;
  std::size_t heads = 4;
  std::size_t ff_dim = 128;
  std::size_t max_decode_length = 24;
  friend bool operator==(const TranslatorConfig&, const TranslatorConfig&) = default;
};

struct ModelConfig {
  AcousticConfig acoustic;
  TranslatorConfig translator;
  FusionStrategy fusion = FusionStrategy::kInterleaveSpeechFirst;
  bool modality_embedding = true;
  double dropout = 0.0;

  std::size_t dim() const { return acoustic.model_dim; }

  /// Modality rows are added to the encoder input except after the
  /// projected-concat block, whose positions mix both modalities.
  bool uses_modality() const { return modality_embedding && fusion != FusionStrategy::kProjectedConcat; }

  AcousticConfig acoustic_with_dropout() const {
    AcousticConfig a = acoustic;
    a.dropout = dropout;
    return a;
  }

  void validate() const {
    acoustic.validate();
    if (dim() % translator.heads != 0) throw InvalidArgument("translator heads must divide model_dim");
    if (translator.max_decode_length == 0) throw InvalidArgument("max decode length must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("dropout must lie in [0, 1)");
  }

  KeyValues to_key_values() const {
    std::string conv;
    for (const ConvSpec& c : acoustic.conv)
      conv += (conv.empty() ? "" : ",") + std::to_string(c.kernel) + "x" + std::to_string(c.stride);
    return {{"feature_dim", std::to_string(acoustic.feature_dim)},
            {"model_dim", std::to_string(acoustic.model_dim)},
            {"conv", conv},
            {"acoustic_blocks", std::to_string(acoustic.encoder_blocks)},
            {"acoustic_heads", std::to_string(acoustic.heads)},
            {"acoustic_ff_dim", std::to_string(acoustic.ff_dim)},
            {"encoder_blocks", std::to_string(translator.encoder_blocks)},
            {"decoder_blocks", std::to_string(translator.decoder_blocks)},
            {"heads", std::to_string(translator.heads)},
            {"ff_dim", std::to_string(translator.ff_dim)},
            {"max_decode_length", std::to_string(translator.max_decode_length)},
            {"fusion", to_string(fusion)},
            {"modality_embedding", modality_embedding ? "1" : "0"},
            {"dropout", format_double(dropout)}};
  }

  /// Overrides fields named in `kv`; unknown keys are ignored.
  void apply(const KeyValues& kv) {
    auto size = [&](const char* k, std::size_t& field) {
      if (auto it = kv.find(k); it != kv.end()) {
        const long long v = parse_int(k, it->second);
        if (v < 0) throw InvalidArgument(std::string("'") + k + "' must be non-negative");
        field = static_cast<std::size_t>(v);
      }
    };
    size("feature_dim", acoustic.feature_dim);
    size("model_dim", acoustic.model_dim);
    size("acoustic_blocks", acoustic.encoder_blocks);
    size("acoustic_heads", acoustic.heads);
    size("acoustic_ff_dim", acoustic.ff_dim);
    size("encoder_blocks", translator.encoder_blocks);
    size("decoder_blocks", translator.decoder_blocks);
    size("heads", translator.heads);
    size("ff_dim", translator.ff_dim);
    size("max_decode_length", translator.max_decode_length);
    if (auto it = kv.find("conv"); it != kv.end()) acoustic.conv = parse_conv(it->second);
    if (auto it = kv.find("fusion"); it != kv.end()) fusion = parse_fusion_strategy(it->second);
    if (auto it = kv.find("modality_embedding"); it != kv.end())
      modality_embedding = parse_int("modality_embedding", it->second) != 0;
    if (auto it = kv.find("dropout"); it != kv.end()) dropout = parse_double("dropout", it->second);
  }

  static std::vector<ConvSpec> parse_conv(const std::string& text) {
    std::vector<ConvSpec> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
      const auto x = item.find('x');
      if (x == std::string::npos) throw InvalidArgument("conv layer '" + item + "' is not KxS");
      const long long k = parse_int("conv", trim(item.substr(0, x)));
      const long long s = parse_int("conv", trim(item.substr(x + 1)));
      if (k < 1 || s < 1) throw InvalidArgument("conv layer '" + item + "' needs kernel and stride >= 1");
      out.push_back({static_cast<std::size_t>(k), static_cast<std::size_t>(s)});
    }
    return out;
  }

  friend bool operator==(const ModelConfig& a, const ModelConfig& b) {
    return a.to_key_values() == b.to_key_values() && a.acoustic.vocab_size == b.acoustic.vocab_size;
  }
};

template <typename T>
struct Model {
  ModelConfig config;
  Vocabulary source;  // acoustic.vocab_size entries; CTC blank is one past the end
  Vocabulary target;  // content tokens, then BOS, EOS, PAD
  Parameters<T> params;

  int bos() const { return target.id(kBos); }
  int eos() const { return target.id(kEos); }
  int pad() const { return target.id(kPad); }
};

/// Target vocabulary = content tokens followed by the three special symbols.
inline Vocabulary with_specials(const Vocabulary& content) {
  Vocabulary v;
  for (const auto& t : content.tokens()) {
    if (t == kBos || t == kEos || t == kPad) throw InvalidArgument("target vocabulary already contains '" + t + "'");
    v.add(t);
  }
  v.add(kBos);
  v.add(kEos);
  v.add(kPad);
  return v;
}

template <typename T>
void init_model_parameters(Model<T>& m, std::uint64_t seed) {
  const std::size_t d = m.config.dim();
  ParamInit<T> init(m.params, seed);
  init_acoustic(init, m.config.acoustic);
  init.table("src.embed", m.source.size(), d, 1.0);
  init.table("tgt.embed", m.target.size(), d, 1.0);
  if (m.config.uses_modality()) init.table("modality", 2, d, 1.0);
  if (m.config.fusion == FusionStrategy::kProjectedConcat) init_fusion(init, d, m.config.translator.ff_dim);
  for (std::size_t i = 0; i < m.config.translator.encoder_blocks; ++i)
    init.encoder_block("enc.block" + std::to_string(i), d, m.config.translator.ff_dim);
  init.layer_norm("enc.ln_f", d);
  for (std::size_t i = 0; i < m.config.translator.decoder_blocks; ++i)
    init.decoder_block("dec.block" + std::to_string(i), d, m.config.translator.ff_dim);
  init.layer_norm("dec.ln_f", d);
  init.linear("dec.out", d, m.target.size());
}

/// `target_content` excludes the special symbols; they are appended here.
template <typename T>
Model<T> make_model(ModelConfig config, const Vocabulary& source, const Vocabulary& target_content,
                    std::uint64_t seed) {
  config.acoustic.vocab_size = source.size();
  config.validate();
  Model<T> m{config, source, with_specials(target_content), {}};
  init_model_parameters(m, seed);
  return m;
}

template <typename T, typename U>
Model<U> cast_model(const Model<T>& m) {
  Model<U> out{m.config, m.source, m.target, {}};
  for (const auto& [name, value] : m.params) out.params.emplace(name, value.template cast<U>());
  return out;
}

// ---------------------------------------------------------------------------
// Forward pieces

template <typename T>
struct SpeechPass {
  Var<T> features;  // T' x d
  Var<T> logits;    // T' x (V + 1)
};

template <typename T>
SpeechPass<T> speech_pass(Graph<T>& g, const Model<T>& m, const Array<float>& frames) {
  Var<T> x;
  if constexpr (std::is_same_v<T, float>) {
    x = g.constant(frames);
  } else {
    x = g.constant(frames.template cast<T>());
  }
  const Var<T> features = encode_speech(g, x, m.config.acoustic_with_dropout());
  return {features, ctc_logits(g, features)};
}

template <typename T>
Var<T> embed_source(Graph<T>& g, const std::vector<int>& ids) {
  return embedding(g.input("src.embed"), ids);
}

/// Translation encoder over an already-fused sequence.
template <typename T>
Var<T> encode_fused(Graph<T>& g, const Model<T>& m, Var<T> x, const std::vector<Provenance>& provenance) {
  x = add_positions(g, x);
  if (m.config.uses_modality()) {
    std::vector<std::size_t> idx;
    idx.reserve(provenance.size());
    for (const Provenance& p : provenance) idx.push_back(static_cast<std::size_t>(p.modality));
    x = add(x, gather_rows(g.input("modality"), idx));
  }
  x = dropout(x, static_cast<T>(m.config.dropout));
  const BlockShape shape{m.config.translator.heads, m.config.dropout};
  for (std::size_t i = 0; i < m.config.translator.encoder_blocks; ++i)
    x = encoder_block(g, x, "enc.block" + std::to_string(i), shape);
  return norm(g, x, "enc.ln_f");
}

/// Encoder states for the text-only path (source token embeddings).
template <typename T>
Var<T> encode_text(Graph<T>& g, const Model<T>& m, const std::vector<int>& transcript) {
  std::vector<Provenance> prov;
  for (std::size_t j = 0; j < transcript.size(); ++j) prov.push_back({Modality::kText, j + 1});
  return encode_fused(g, m, embed_source(g, transcript), prov);
}

/// Decoder logits, one row per prefix position.
template <typename T>
Var<T> decoder_logits(Graph<T>& g, const Model<T>& m, Var<T> memory, const std::vector<int>& prefix) {
  Var<T> y = add_positions(g, embedding(g.input("tgt.embed"), prefix));
  y = dropout(y, static_cast<T>(m.config.dropout));
  const BlockShape shape{m.config.translator.heads, m.config.dropout};
  for (std::size_t i = 0; i < m.config.translator.decoder_blocks; ++i)
    y = decoder_block(g, y, memory, "dec.block" + std::to_string(i), shape);
  return linear(g, norm(g, y, "dec.ln_f"), "dec.out");
}

/// Summed teacher-forced cross-entropy of BOS target -> target EOS.
template <typename T>
Var<T> sequence_nll(Graph<T>& g, const Model<T>& m, Var<T> memory, const std::vector<int>& target) {
  if (target.size() + 1 > m.config.translator.max_decode_length)
    throw InvalidArgument("target of " + std::to_string(target.size()) + " tokens exceeds max decode length " +
                          std::to_string(m.config.translator.max_decode_length));
  std::vector<int> prefix{m.bos()};
  prefix.insert(prefix.end(), target.begin(), target.end());
  std::vector<int> gold(target);
  gold.push_back(m.eos());
  return cross_entropy(decoder_logits(g, m, memory, prefix), gold, -1, Reduction::kSum);
}

/// Fused encoder states for one utterance: align `transcript` to the CTC
/// posteriors, optionally perturb the spans, fuse, encode.
template <typename T>
Var<T> fused_memory(Graph<T>& g, const Model<T>& m, const SpeechPass<T>& sp, const std::vector<int>& transcript,
                    const NoiseConfig& noise, Alignment* alignment_out = nullptr) {
  Alignment a = forced_align(sp.logits.value(), transcript);
  if (noise.sigma > 0) a = inject_alignment_noise(a, sp.features.rows(), noise);
  if (alignment_out) *alignment_out = a;
  const FusedSequence<T> f = fuse(g, sp.features, embed_source(g, transcript), a, m.config.fusion, m.config.dropout);
  return encode_fused(g, m, f.values, f.provenance);
}

// ---------------------------------------------------------------------------
// Objectives

/// One training utterance. `transcript` indexes the source vocabulary,
/// `target` the target vocabulary (no BOS/EOS).
struct Example {
  std::string id;
  const Array<float>* frames = nullptr;
  std::vector<int> transcript;
  std::vector<int> target;
};

struct LossWeights {
  double asr = 1.0;
  double mt = 1.5;

  void validate() const {
    if (!(asr >= 0.0) || !(mt >= 0.0)) throw InvalidArgument("loss weights must be non-negative");
  }
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct BatchOptions {
  LossWeights weights;
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;
  /// Per example: fuse the greedy ASR transcript instead of the gold one
  /// (falls back to gold when the decode is empty). Empty = all gold.
  std::vector<bool> use_asr_transcript;
  bool compute_st = true;
};

template <typename T>
struct LossTerms {
  Var<T> total;
  double st = 0.0;
  double asr = 0.0;
  /// Zero and not computed when the MT weight is zero.
  double mt = 0.0;
  std::size_t target_tokens = 0;
  std::size_t transcript_tokens = 0;
};

namespace detail {

template <typename T>
Var<T> accumulate(Graph<T>& g, const std::vector<Var<T>>& terms) {
  if (terms.empty()) return g.constant(Array<T>::scalar(T{0}));
  Var<T> s = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) s = add(s, terms[i]);
  return s;
}

}  // namespace detail

/// total = st + asr_weight * asr + mt_weight * mt. Each term is a per-token
/// mean over the batch: st and mt divide by target tokens (+1 EOS each), asr
/// by transcript tokens. A term with zero weight is left out of the graph.
template <typename T>
LossTerms<T> batch_loss(Graph<T>& g, const Model<T>& m, const std::vector<Example>& batch, const BatchOptions& opt) {
  opt.weights.validate();
  if (batch.empty()) throw InvalidArgument("empty batch");
  if (!opt.use_asr_transcript.empty() && opt.use_asr_transcript.size() != batch.size())
    throw InvalidArgument("use_asr_transcript must have one flag per example");
  std::vector<Var<T>> st, asr, mt;
  LossTerms<T> out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Example& ex = batch[i];
    if (!ex.frames) throw InvalidArgument("example " + ex.id + " has no frames");
    if (ex.transcript.empty()) throw InvalidArgument("example " + ex.id + " has an empty transcript");
    const SpeechPass<T> sp = speech_pass(g, m, *ex.frames);
    asr.push_back(ctc_loss(sp.logits, ex.transcript));
    out.transcript_tokens += ex.transcript.size();
    out.target_tokens += ex.target.size() + 1;
    if (opt.compute_st) {
      std::vector<int> fused_transcript = ex.transcript;
      if (!opt.use_asr_transcript.empty() && opt.use_asr_transcript[i]) {
        auto decoded = ctc_greedy_decode(sp.logits.value());
        if (!decoded.empty()) fused_transcript = std::move(decoded);
      }
      const NoiseConfig noise{opt.noise_sigma, mix_seed(opt.noise_seed, fnv1a(ex.id))};
      st.push_back(sequence_nll(g, m, fused_memory(g, m, sp, fused_transcript, noise), ex.target));
    }
    if (opt.weights.mt > 0) mt.push_back(sequence_nll(g, m, encode_text(g, m, ex.transcript), ex.target));
  }
  const T inv_tgt = T{1} / static_cast<T>(out.target_tokens);
  const T inv_src = T{1} / static_cast<T>(out.transcript_tokens);
  const Var<T> st_mean = scale(detail::accumulate(g, st), inv_tgt);
  const Var<T> asr_mean = scale(detail::accumulate(g, asr), inv_src);
  out.st = static_cast<double>(st_mean.value().item());
  out.asr = static_cast<double>(asr_mean.value().item());
  Var<T> total = st_mean;
  if (opt.weights.asr > 0) total = add(total, scale(asr_mean, static_cast<T>(opt.weights.asr)));
  if (opt.weights.mt > 0) {
    const Var<T> mt_mean = scale(detail::accumulate(g, mt), inv_tgt);
    out.mt = static_cast<double>(mt_mean.value().item());
    total = add(total, scale(mt_mean, static_cast<T>(opt.weights.mt)));
  }
  out.total = total;
  return out;
}

/// Mean per-token ST cross-entropy (gold transcripts fused).
template <typename T>
Var<T> st_loss(Graph<T>& g, const Model<T>& m, const std::vector<Example>& batch) {
  BatchOptions opt;
  opt.weights = {0.0, 0.0};
  return batch_loss(g, m, batch, opt).total;
}

/// Mean per-token MT cross-entropy from source embeddings alone.
template <typename T>
Var<T> mt_loss(Graph<T>& g, const Model<T>& m, const std::vector<Example>& batch) {
  if (batch.empty()) throw InvalidArgument("empty batch");
  std::vector<Var<T>> terms;
  std::size_t tokens = 0;
  for (const Example& ex : batch) {
    if (ex.transcript.empty()) throw InvalidArgument("example " + ex.id + " has an empty transcript");
    terms.push_back(sequence_nll(g, m, encode_text(g, m, ex.transcript), ex.target));
    tokens += ex.target.size() + 1;
  }
  return scale(detail::accumulate(g, terms), T{1} / static_cast<T>(tokens));
}

/// Mean per-token CTC loss of the ASR head against the gold transcripts.
template <typename T>
Var<T> asr_loss(Graph<T>& g, const Model<T>& m, const std::vector<Example>& batch) {
  if (batch.empty()) throw InvalidArgument("empty batch");
  std::vector<Var<T>> terms;
  std::size_t tokens = 0;
  for (const Example& ex : batch) {
    terms.push_back(ctc_loss(speech_pass(g, m, *ex.frames).logits, ex.transcript));
    tokens += ex.transcript.size();
  }
  return scale(detail::accumulate(g, terms), T{1} / static_cast<T>(tokens));
}

template <typename T>
Var<T> total_loss(Graph<T>& g, const Model<T>& m, const std::vector<Example>& batch, const LossWeights& w) {
  BatchOptions opt;
  opt.weights = w;
  return batch_loss(g, m, batch, opt).total;
}

// ---------------------------------------------------------------------------
// Scheduled sampling

enum class SamplingMode { kTeacherForcing, kScheduled };

struct SamplingSchedule {
  SamplingMode mode = SamplingMode::kTeacherForcing;
  double p0 = 1.0;
  double decay = 0.2;

  void validate() const {
    if (!(p0 >= 0.0 && p0 <= 1.0)) throw InvalidArgument("sampling p0 must lie in [0, 1]");
    if (!(decay >= 0.0)) throw InvalidArgument("sampling decay must be non-negative");
  }

  /// Probability of using the gold transcript in a 0-based epoch.
  double gold_probability(std::size_t epoch) const {
    if (mode == SamplingMode::kTeacherForcing) return 1.0;
    return std::max(0.0, p0 - decay * static_cast<double>(epoch));
  }

  /// Draws the per-utterance choice; true means use the ASR transcript.
  bool draw_asr(std::size_t epoch, std::mt19937_64& rng) const {
    const double p = gold_probability(epoch);
    if (p >= 1.0) return false;
    if (p <= 0.0) return true;
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng) >= p;
  }
};

/// Transcript fused for `ex` in `epoch`: gold with probability p(epoch),
/// otherwise the greedy ASR decode (gold again if that decode is empty).
template <typename T>
std::vector<int> scheduled_transcript(const Model<T>& m, const Example& ex, std::size_t epoch,
                                      const SamplingSchedule& schedule, std::mt19937_64& rng) {
  if (!schedule.draw_asr(epoch, rng)) return ex.transcript;
  Graph<T> g(&m.params, false);
  auto decoded = ctc_greedy_decode(speech_pass(g, m, *ex.frames).logits.value());
  return decoded.empty() ? ex.transcript : decoded;
}

// ---------------------------------------------------------------------------
// Inference

struct Translation {
  std::vector<int> target;      // target ids, no BOS/EOS
  std::vector<int> transcript;  // greedy ASR output, source ids
  Alignment alignment;
  /// ASR produced nothing; the encoder read the speech features alone.
  bool fallback = false;
};

/// Argmax over a logit row, skipping `banned`; ties go to the lowest index.
template <typename T>
int argmax_except(const T* row, std::size_t n, const std::vector<int>& banned) {
  int best = -1;
  for (std::size_t k = 0; k < n; ++k) {
    if (std::find(banned.begin(), banned.end(), static_cast<int>(k)) != banned.end()) continue;
    if (best < 0 || row[k] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
  }
  return best;
}

/// Greedy decode until EOS or the length cap.
template <typename T>
std::vector<int> greedy_decode(Graph<T>& g, const Model<T>& m, Var<T> memory) {
  std::vector<int> prefix{m.bos()};
  std::vector<int> out;
  const std::vector<int> banned{m.bos(), m.pad()};
  while (out.size() < m.config.translator.max_decode_length) {
    const Array<T>& logits = decoder_logits(g, m, memory, prefix).value();
    const std::size_t last = logits.rows() - 1;
    const int next = argmax_except(logits.data() + last * logits.cols(), logits.cols(), banned);
    if (next == m.eos()) break;
    out.push_back(next);
    prefix.push_back(next);
  }
  return out;
}

/// frames -> ASR transcript -> forced alignment -> fusion -> translation.
template <typename T>
Translation translate(const Model<T>& m, const Array<float>& frames) {
  Graph<T> g(&m.params, false);
  const SpeechPass<T> sp = speech_pass(g, m, frames);
  Translation out;
  out.transcript = ctc_greedy_decode(sp.logits.value());
  Var<T> memory;
  if (out.transcript.empty()) {
    out.fallback = true;
    std::vector<Provenance> prov;
    for (std::size_t t = 0; t < sp.features.rows(); ++t) prov.push_back({Modality::kSpeech, t + 1});
    memory = encode_fused(g, m, sp.features, prov);
  } else {
    memory = fused_memory(g, m, sp, out.transcript, NoiseConfig{}, &out.alignment);
  }
  out.target = greedy_decode(g, m, memory);
  return out;
}

/// MT-only translation of a source transcript.
template <typename T>
std::vector<int> translate_text(const Model<T>& m, const std::vector<int>& transcript) {
  Graph<T> g(&m.params, false);
  return greedy_decode(g, m, encode_text(g, m, transcript));
}

// ---------------------------------------------------------------------------
// Checkpoints: <path> holds the parameters, <path>.meta the configuration
// and vocabularies.

inline constexpr char kCheckpointMagic[4] = {'C', 'S', 'T', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::filesystem::path checkpoint_meta_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".meta");
}

inline void save_checkpoint(const std::filesystem::path& path, const Model<float>& m) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out.write(kCheckpointMagic, 4);
    io::put_u32(out, kCheckpointVersion);
    io::put_u32(out, static_cast<std::uint32_t>(m.params.size()));
    for (const auto& [name, value] : m.params) {
      io::put_u32(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      io::put_u32(out, static_cast<std::uint32_t>(value.rank()));
      for (std::size_t e : value.shape()) io::put_u32(out, static_cast<std::uint32_t>(e));
      for (float f : value.values()) io::put_f32(out, f);
    }
    if (!out) throw Error("write failed: " + path.string());
  }
  KeyValues kv = m.config.to_key_values();
  std::string src, tgt;
  for (const auto& t : m.source.tokens()) src += (src.empty() ? "" : " ") + t;
  for (const auto& t : m.target.tokens()) tgt += (tgt.empty() ? "" : " ") + t;
  kv["source_vocab"] = src;
  kv["target_vocab"] = tgt;
  write_key_values(checkpoint_meta_path(path), kv);
}

inline Model<float> load_checkpoint(const std::filesystem::path& path) {
  const KeyValues kv = read_key_values(checkpoint_meta_path(path));
  Model<float> m;
  m.config.apply(kv);
  auto vocab = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(checkpoint_meta_path(path).string() + ": missing " + key);
    Vocabulary v;
    std::stringstream in(it->second);
    std::string tok;
    while (in >> tok) v.add(tok);
    return v;
  };
  m.source = vocab("source_vocab");
  m.target = vocab("target_vocab");
  m.config.acoustic.vocab_size = m.source.size();
  m.config.validate();

  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  const std::string where = "checkpoint " + path.string();
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError(where + ": bad magic");
  std::uint32_t version = 0, count = 0;
  if (!io::get_u32(in, version) || !io::get_u32(in, count)) throw FormatError(where + ": truncated header");
  if (version != kCheckpointVersion) throw FormatError(where + ": unsupported version " + std::to_string(version));
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t len = 0, rank = 0;
    if (!io::get_u32(in, len) || len > 4096) throw FormatError(where + ": bad block name");
    std::string name(len, '\0');
    if (!in.read(name.data(), len) || !io::get_u32(in, rank) || rank == 0 || rank > 8)
      throw FormatError(where + ": truncated block " + std::to_string(i));
    Shape shape(rank);
    for (auto& e : shape) {
      std::uint32_t v = 0;
      if (!io::get_u32(in, v) || v == 0) throw FormatError(where + ": bad extents for " + name);
      e = v;
    }
    std::vector<float> data(shape_size(shape));
    for (float& f : data)
      if (!io::get_f32(in, f)) throw FormatError(where + ": truncated data for " + name);
    m.params.emplace(name, Array<float>(shape, std::move(data)));
  }
  // Every parameter the configuration expects must be present with its shape.
  Model<float> fresh{m.config, m.source, m.target, {}};
  init_model_parameters(fresh, 0);
  for (const auto& [name, value] : fresh.params) {
    auto it = m.params.find(name);
    if (it == m.params.end()) throw FormatError(where + ": missing parameter " + name);
    if (it->second.shape() != value.shape())
      throw FormatError(where + ": " + name + " has shape " + shape_string(it->second.shape()) + ", expected " +
                        shape_string(value.shape()));
  }
  return m;
}

}  // namespace costa
