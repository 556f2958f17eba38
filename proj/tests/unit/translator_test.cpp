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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "support/fixtures.hpp"

using namespace costa;
namespace fs = std::filesystem;

namespace {

using G = Graph<double>;

struct Fixture {
  corpus::CorpusManifest data;
  Model<double> model;
  std::vector<Example> batch;
};

Fixture setup(std::size_t n, std::uint64_t seed, FusionStrategy fusion = FusionStrategy::kInterleaveSpeechFirst) {
  Fixture s{corpus::generate_corpus(fixture::tiny_corpus(n, seed)), {}, {}};
  s.model = fixture::tiny_model<double>(s.data, seed + 100, fusion);
  s.batch = fixture::examples(s.data, s.model);
  return s;
}

/// log-softmax CE of one row, computed directly.
double row_nll(const Array<double>& logits, std::size_t r, int gold) {
  double mx = -1e300;
  for (std::size_t k = 0; k < logits.cols(); ++k) mx = std::max(mx, logits(r, k));
  double z = 0;
  for (std::size_t k = 0; k < logits.cols(); ++k) z += std::exp(logits(r, k) - mx);
  return mx + std::log(z) - logits(r, static_cast<std::size_t>(gold));
}

TEST(Model, VocabularyLayout) {
  const Fixture s = setup(2, 1);
  EXPECT_EQ(s.model.source.size(), 8u);
  EXPECT_EQ(s.model.target.size(), 11u);
  EXPECT_EQ(s.model.bos(), 8);
  EXPECT_EQ(s.model.eos(), 9);
  EXPECT_EQ(s.model.pad(), 10);
  EXPECT_EQ(s.model.config.acoustic.vocab_size, 8u);
  EXPECT_EQ(s.model.params.at("acoustic.ctc.w").cols(), 9u);
  EXPECT_THROW(with_specials(Vocabulary({"a", kEos})), InvalidArgument);
}

TEST(EncodeFused, ShapeDeterminismAndGradient) {
  const Fixture s = setup(1, 2);
  Bindings<double> b = s.model.params;
  std::mt19937_64 rng(3);
  b["x"] = random_normal<double>({6, s.model.config.dim()}, rng);
  std::vector<Provenance> prov;
  for (std::size_t j = 0; j < 3; ++j) prov.push_back({Modality::kSpeech, j + 1}), prov.push_back({Modality::kText, j + 1});
  G g1(&b, false), g2(&b, false);
  const Array<double> a = encode_fused(g1, s.model, g1.input("x"), prov).value();
  EXPECT_EQ(a.rows(), 6u);
  EXPECT_EQ(a.cols(), s.model.config.dim());
  EXPECT_EQ(encode_fused(g2, s.model, g2.input("x"), prov).value(), a);
  GradCheckOptions opt;
  opt.names = {"x", "modality", "enc.block0.q.w", "enc.ln_f.g"};
  const auto r = grad_check<double>(
      [&](G& g) {
        const Var<double> y = encode_fused(g, s.model, g.input("x"), prov);
        return sum(mul(y, y));
      },
      b, opt);
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst_input;
}

TEST(StLoss, UniformDecoderGivesLogV) {
  Fixture s = setup(3, 4);
  s.model.params["dec.out.w"].fill(0.0);
  s.model.params["dec.out.b"].fill(0.0);
  G g(&s.model.params, false);
  const double v = static_cast<double>(s.model.target.size());
  EXPECT_NEAR(st_loss(g, s.model, s.batch).value().item(), std::log(v), 1e-12);
  EXPECT_NEAR(mt_loss(g, s.model, s.batch).value().item(), std::log(v), 1e-12);
}

TEST(StLoss, CertainDecoderGivesZero) {
  Fixture s = setup(2, 5);
  s.model.params["dec.out.w"].fill(0.0);
  s.model.params["dec.out.b"].fill(0.0);
  s.model.params["dec.out.b"][static_cast<std::size_t>(s.model.eos())] = 1e4;
  for (auto& ex : s.batch) ex.target.clear();  // gold is EOS alone
  G g(&s.model.params, false);
  EXPECT_NEAR(st_loss(g, s.model, s.batch).value().item(), 0.0, 1e-12);
  EXPECT_NEAR(mt_loss(g, s.model, s.batch).value().item(), 0.0, 1e-12);
}

TEST(StLoss, TwoUtteranceBatchMatchesManualCrossEntropy) {
  const Fixture s = setup(2, 6);
  G g(&s.model.params, false);
  double total = 0;
  std::size_t tokens = 0;
  double mt_total = 0;
  for (const Example& ex : s.batch) {
    const SpeechPass<double> sp = speech_pass(g, s.model, *ex.frames);
    const Var<double> memory = fused_memory(g, s.model, sp, ex.transcript, NoiseConfig{});
    const Var<double> text_memory = encode_text(g, s.model, ex.transcript);
    std::vector<int> prefix{s.model.bos()};
    prefix.insert(prefix.end(), ex.target.begin(), ex.target.end());
    std::vector<int> gold = ex.target;
    gold.push_back(s.model.eos());
    const Array<double> logits = decoder_logits(g, s.model, memory, prefix).value();
    const Array<double> mt_logits = decoder_logits(g, s.model, text_memory, prefix).value();
    for (std::size_t r = 0; r < gold.size(); ++r) {
      total += row_nll(logits, r, gold[r]);
      mt_total += row_nll(mt_logits, r, gold[r]);
    }
    tokens += gold.size();
  }
  G h(&s.model.params, false);
  EXPECT_NEAR(st_loss(h, s.model, s.batch).value().item(), total / static_cast<double>(tokens), 1e-6);
  EXPECT_NEAR(mt_loss(h, s.model, s.batch).value().item(), mt_total / static_cast<double>(tokens), 1e-6);
}

TEST(TotalLoss, DecomposesIntoIndependentTerms) {
  const Fixture s = setup(3, 7);
  auto eval = [&](auto fn) {
    G g(&s.model.params, false);
    return fn(g).value().item();
  };
  const double st = eval([&](G& g) { return st_loss(g, s.model, s.batch); });
  const double asr = eval([&](G& g) { return asr_loss(g, s.model, s.batch); });
  const double mt = eval([&](G& g) { return mt_loss(g, s.model, s.batch); });
  for (const LossWeights w : {LossWeights{1.0, 1.5}, LossWeights{0.5, 0.0}, LossWeights{0.0, 2.0}}) {
    const double total = eval([&](G& g) { return total_loss(g, s.model, s.batch, w); });
    EXPECT_NEAR(total, st + w.asr * asr + w.mt * mt, 1e-9);
  }
  EXPECT_EQ(eval([&](G& g) { return total_loss(g, s.model, s.batch, {0.0, 0.0}); }), st);
  G g(&s.model.params, false);
  const LossTerms<double> terms = batch_loss(g, s.model, s.batch, BatchOptions{});
  EXPECT_NEAR(terms.total.value().item(), terms.st + terms.asr + 1.5 * terms.mt, 1e-12);
  EXPECT_NEAR(terms.asr, asr, 1e-12);
}

TEST(TotalLoss, DefaultsAndNegativeWeights) {
  const LossWeights w;
  EXPECT_EQ(w.asr, 1.0);
  EXPECT_EQ(w.mt, 1.5);
  const Fixture s = setup(1, 8);
  G g(&s.model.params, false);
  EXPECT_THROW(total_loss(g, s.model, s.batch, {-0.1, 1.0}), InvalidArgument);
  EXPECT_THROW(total_loss(g, s.model, s.batch, {1.0, -1.0}), InvalidArgument);
}

TEST(TotalLoss, PermutationInvariant) {
  const Fixture s = setup(5, 9);
  std::vector<Example> rev(s.batch.rbegin(), s.batch.rend());
  G g(&s.model.params, false);
  EXPECT_NEAR(total_loss(g, s.model, s.batch, {}).value().item(), total_loss(g, s.model, rev, {}).value().item(),
              1e-12);
}

TEST(TotalLoss, GradientMatchesFiniteDifferencesEveryGroup) {
  for (FusionStrategy f : kAllFusionStrategies) {
    Fixture s = setup(2, 10, f);
    Bindings<double> params = s.model.params;
    GradCheckOptions opt;
    opt.max_coords_per_input = 3;
    const auto r = grad_check<double>(
        [&](G& g) {
          return total_loss(g, s.model, s.batch, {});
        },
        params, opt);
    EXPECT_LE(r.max_rel_error, 1e-4) << to_string(f) << " worst " << r.worst_input;
  }
}

TEST(TargetLength, OverlongTargetRejected) {
  Fixture s = setup(1, 11);
  s.model.config.translator.max_decode_length = 2;
  G g(&s.model.params, false);
  EXPECT_THROW(st_loss(g, s.model, s.batch), InvalidArgument);
}

TEST(ScheduledSampling, ProbabilityLine) {
  SamplingSchedule tf;
  EXPECT_EQ(tf.gold_probability(100), 1.0);
  SamplingSchedule sch{SamplingMode::kScheduled, 1.0, 0.2};
  EXPECT_DOUBLE_EQ(sch.gold_probability(0), 1.0);
  EXPECT_DOUBLE_EQ(sch.gold_probability(2), 0.6);
  EXPECT_EQ(sch.gold_probability(5), 0.0);
  EXPECT_EQ(sch.gold_probability(9), 0.0);
}

TEST(ScheduledSampling, TranscriptChoice) {
  const Fixture s = setup(6, 12);
  std::mt19937_64 rng(1);
  const SamplingSchedule tf;
  const SamplingSchedule late{SamplingMode::kScheduled, 1.0, 0.2};
  for (const Example& ex : s.batch) {
    EXPECT_EQ(scheduled_transcript(s.model, ex, 7, tf, rng), ex.transcript);
    G g(&s.model.params, false);
    const auto asr = ctc_greedy_decode(speech_pass(g, s.model, *ex.frames).logits.value());
    EXPECT_EQ(scheduled_transcript(s.model, ex, 5, late, rng), asr.empty() ? ex.transcript : asr);
  }
  Model<double> silent = s.model;
  silent.params["acoustic.ctc.b"][static_cast<std::size_t>(silent.config.acoustic.blank())] = 1e4;
  for (const Example& ex : s.batch) EXPECT_EQ(scheduled_transcript(silent, ex, 5, late, rng), ex.transcript);
}

TEST(Translate, DeterministicAndCapped) {
  Fixture s = setup(4, 13);
  s.model.config.translator.max_decode_length = 3;
  s.model.params["dec.out.b"][static_cast<std::size_t>(s.model.eos())] = -1e3;
  for (const auto& u : s.data.records) {
    const Translation a = translate(s.model, u.frames);
    const Translation b = translate(s.model, u.frames);
    EXPECT_EQ(a.target, b.target);
    EXPECT_EQ(a.transcript, b.transcript);
    EXPECT_EQ(a.target.size(), 3u);
    for (int t : a.target) {
      EXPECT_NE(t, s.model.bos());
      EXPECT_NE(t, s.model.pad());
    }
  }
}

TEST(Translate, EmptyAsrFallsBackToSpeechOnly) {
  Fixture s = setup(2, 14);
  s.model.params["acoustic.ctc.b"][static_cast<std::size_t>(s.model.config.acoustic.blank())] = 1e4;
  const Translation t = translate(s.model, s.data.records[0].frames);
  EXPECT_TRUE(t.fallback);
  EXPECT_TRUE(t.transcript.empty());
  EXPECT_LE(t.target.size(), s.model.config.translator.max_decode_length);
}

TEST(Translate, ArgmaxInvariantToConstantShift) {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 50; ++trial) {
    Array<double> row = random_normal<double>({1, 9}, rng);
    const int a = argmax_except(row.data(), 9, {3, 4});
    for (std::size_t k = 0; k < 9; ++k) row[k] += 17.25;
    EXPECT_EQ(argmax_except(row.data(), 9, {3, 4}), a);
    EXPECT_NE(a, 3);
    EXPECT_NE(a, 4);
  }
  const double tied[3] = {1.0, 1.0, 1.0};
  EXPECT_EQ(argmax_except(tied, 3, {0}), 1);
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("costa_translator_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto data = corpus::generate_corpus(fixture::tiny_corpus(4, 16));
  for (FusionStrategy f : {FusionStrategy::kInterleaveSpeechFirst, FusionStrategy::kProjectedConcat}) {
    Model<float> m = fixture::tiny_model<float>(data, 17, f);
    m.config.modality_embedding = f == FusionStrategy::kInterleaveSpeechFirst;
    if (!m.config.uses_modality()) m.params.erase("modality");
    const fs::path p = scratch("rt") / "model.cstm";
    save_checkpoint(p, m);
    const Model<float> r = load_checkpoint(p);
    EXPECT_EQ(r.params, m.params);
    EXPECT_EQ(r.config, m.config);
    EXPECT_EQ(r.source, m.source);
    EXPECT_EQ(r.target, m.target);
    for (const auto& u : data.records) EXPECT_EQ(translate(r, u.frames).target, translate(m, u.frames).target);
    const fs::path q = p.parent_path() / "again.cstm";
    save_checkpoint(q, r);
    std::ifstream a(p, std::ios::binary), b(q, std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
    EXPECT_EQ(sa, sb);
  }
}

TEST(Checkpoint, CorruptFilesRejected) {
  const auto data = corpus::generate_corpus(fixture::tiny_corpus(1, 18));
  const Model<float> m = fixture::tiny_model<float>(data, 19);
  const fs::path p = scratch("corrupt") / "model.cstm";
  save_checkpoint(p, m);
  fs::resize_file(p, fs::file_size(p) - 2);
  EXPECT_THROW(load_checkpoint(p), FormatError);
  save_checkpoint(p, m);
  {
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.write("NOPE", 4);
  }
  EXPECT_THROW(load_checkpoint(p), FormatError);
  Model<float> missing = m;
  missing.params.erase("dec.out.b");
  save_checkpoint(p, missing);
  EXPECT_THROW(load_checkpoint(p), FormatError);
}

TEST(ModelConfigText, RoundTrip) {
  ModelConfig c = fixture::tiny_model_config(FusionStrategy::kDirectInterleave);
  c.acoustic.conv = AcousticConfig::stride4_preset();
  c.modality_embedding = false;
  c.dropout = 0.15;
  ModelConfig d;
  d.apply(c.to_key_values());
  EXPECT_EQ(d, c);
  EXPECT_THROW(d.apply({{"conv", "2y2"}}), InvalidArgument);
  EXPECT_THROW(d.apply({{"fusion", "zip"}}), InvalidArgument);
}

}  // namespace
