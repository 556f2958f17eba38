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
#include <limits>

#include "costa/trainer.hpp"
#include "support/fixtures.hpp"

namespace costa {
namespace {

TrainConfig tiny_train_config(std::size_t epochs = 2) {
  TrainConfig c;
  c.model = fixture::tiny_model_config();
  c.epochs = epochs;
  c.batch_size = 4;
  c.warmup_steps = 4;
  c.lr = 3e-3;
  c.seed = 11;
  return c;
}

TEST(Schedule, WarmupIsLinearThenFlat) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(c.lr_at(1), 3e-4 / 200);
  EXPECT_DOUBLE_EQ(c.lr_at(100), 3e-4 / 2);
  EXPECT_DOUBLE_EQ(c.lr_at(200), 3e-4);
  EXPECT_DOUBLE_EQ(c.lr_at(5000), 3e-4);
  c.apply_full_scale_hparams();
  EXPECT_DOUBLE_EQ(c.lr_at(20000), 6e-5);
  EXPECT_DOUBLE_EQ(c.lr_at(10000), 3e-5);
}

TEST(Schedule, DefaultsMatchTheRecipe) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(c.beta1, 0.9);
  EXPECT_DOUBLE_EQ(c.beta2, 0.98);
  EXPECT_DOUBLE_EQ(c.eps, 1e-9);
  EXPECT_DOUBLE_EQ(c.dropout, 0.15);
  EXPECT_DOUBLE_EQ(c.clip_norm, 1.0);
}

TEST(Schedule, ConfigRoundTripsThroughKeyValues) {
  TrainConfig c = tiny_train_config(7);
  c.weights = {0.5, 0.25};
  c.sampling.mode = SamplingMode::kScheduled;
  c.noise_sigma = 3.0;
  c.model.fusion = FusionStrategy::kProjectedConcat;
  TrainConfig d;
  d.apply(c.to_key_values());
  EXPECT_EQ(d.to_key_values(), c.to_key_values());
  EXPECT_EQ(d.model, [&] {
    ModelConfig m = c.model;
    m.dropout = c.dropout;
    return m;
  }());
  EXPECT_THROW(d.apply({{"sampling", "sometimes"}}), InvalidArgument);
  EXPECT_THROW(d.apply({{"epochs", "-1"}}), InvalidArgument);
}

TEST(Optimiser, ClipScalesToTheMaxNorm) {
  Gradients<float> g;
  g.emplace("a", Array<float>({1, 2}, {3.0f, 0.0f}));
  g.emplace("b", Array<float>({1, 1}, {4.0f}));
  EXPECT_NEAR(clip_global_norm(g, 1.0), 5.0, 1e-9);
  EXPECT_NEAR(g.at("a")[0], 0.6f, 1e-6);
  EXPECT_NEAR(g.at("b")[0], 0.8f, 1e-6);
  // Below the threshold nothing changes.
  EXPECT_NEAR(clip_global_norm(g, 10.0), 1.0, 1e-6);
  EXPECT_NEAR(g.at("b")[0], 0.8f, 1e-6);
}

TEST(Optimiser, AdamMatchesHandComputedSteps) {
  Parameters<float> p;
  p.emplace("w", Array<float>({1, 2}, {1.0f, -1.0f}));
  Adam adam(0.9, 0.98, 1e-9);
  Gradients<float> g;
  g.emplace("w", Array<float>({1, 2}, {0.5f, -2.0f}));
  adam.step(p, g, 0.1);
  // First bias-corrected step is lr * sign(g).
  EXPECT_NEAR(p.at("w")[0], 0.9f, 1e-6);
  EXPECT_NEAR(p.at("w")[1], -0.9f, 1e-6);
  g.at("w")[0] = 1.0f;
  adam.step(p, g, 0.1);
  double m = 0.9 * 0.05 + 0.1 * 1.0, v = 0.98 * 0.02 * 0.25 + 0.02 * 1.0;
  double mhat = m / (1 - 0.81), vhat = v / (1 - 0.98 * 0.98);
  EXPECT_NEAR(p.at("w")[0], 0.9 - 0.1 * mhat / (std::sqrt(vhat) + 1e-9), 1e-6);
  EXPECT_EQ(adam.steps(), 2u);
}

TEST(Data, ValidationSplitIsAboutATenthAndStable) {
  std::size_t held = 0;
  for (std::size_t i = 0; i < 2000; ++i) held += is_validation(corpus::utterance_id(i)) ? 1 : 0;
  EXPECT_GT(held, 150u);
  EXPECT_LT(held, 250u);
  EXPECT_EQ(is_validation("utt-000017"), is_validation("utt-000017"));
}

TEST(Report, PerfectRowsScoreFullMarks) {
  std::vector<metrics::UtteranceScore> rows(3);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].id = "u" + std::to_string(i);
    rows[i].hypothesis = rows[i].reference = {"t1", "t2", "e0", "t3", "t4"};
    rows[i].transcript = rows[i].gold_transcript = {"m1", "e0", "m3"};
    rows[i].bleu_sentence = 100.0;
    rows[i].embedded_count = static_cast<int>(i + 1);
    rows[i].spans_total = rows[i].spans_matched = 1;
    rows[i].cmi = 0.3;
  }
  const auto r = metrics::summarize(rows);
  EXPECT_NEAR(r.bleu, 100.0, 1e-9);
  EXPECT_EQ(r.wer, 0.0);
  EXPECT_NEAR(r.cmi, 0.3, 1e-12);
  EXPECT_EQ(r.span_accuracy, 100.0);
  EXPECT_EQ(r.utterances, 3u);
  ASSERT_EQ(r.bins.size(), 4u);
  EXPECT_EQ(r.bins[0].count, 2u);
  EXPECT_EQ(r.bins[1].count, 1u);
}

TEST(Report, WerIsPooledOverTokens) {
  std::vector<metrics::UtteranceScore> rows(2);
  rows[0].gold_transcript = {"a"};
  rows[0].transcript = {"b"};
  rows[1].gold_transcript = {"a", "b", "c"};
  rows[1].transcript = {"a", "b", "c"};
  // one edit over four reference tokens, not the mean of 1.0 and 0.0
  EXPECT_DOUBLE_EQ(metrics::summarize(rows).wer, 0.25);
}

TEST(Report, CsvRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "costa_report_test";
  std::filesystem::create_directories(dir);
  std::vector<metrics::UtteranceScore> rows(2);
  rows[0] = {"a", 0.5, 12.5, 0.25, 2, 3, 1, true, {"t1", "e2"}, {"t1"}, {}, {"m1", "e2"}};
  rows[1] = {"b", 0.0, 100.0, 0.0, 0, 0, 0, false, {"t2"}, {"t2"}, {"m2"}, {"m2"}};
  const auto r = metrics::summarize(rows);
  metrics::write_per_utt_csv(dir / "per_utt.csv", r);
  EXPECT_EQ(metrics::read_per_utt_csv(dir / "per_utt.csv"), rows);
  metrics::write_report_csv(dir / "report.csv", r);
  const auto kv = metrics::read_report_csv(dir / "report.csv");
  EXPECT_EQ(kv.at("utterances"), "2");
  EXPECT_EQ(kv.at("flagged"), "1");
  EXPECT_NEAR(parse_double("bleu", kv.at("bleu")), r.bleu, 1e-9);
  std::ofstream(dir / "bad.csv") << metrics::kPerUttHeader << "\nonly,three,fields\n";
  EXPECT_THROW(metrics::read_per_utt_csv(dir / "bad.csv"), FormatError);
  std::filesystem::remove_all(dir);
}

struct TrainFixture : testing::Test {
  corpus::CorpusManifest data = corpus::generate_corpus(fixture::tiny_corpus(24, 5));
};

TEST_F(TrainFixture, TrainingIsDeterministic) {
  const TrainConfig c = tiny_train_config();
  const TrainResult a = train(data, c);
  const TrainResult b = train(data, c);
  EXPECT_EQ(a.model.params, b.model.params);
  ASSERT_EQ(a.log.steps.size(), b.log.steps.size());
  for (std::size_t i = 0; i < a.log.steps.size(); ++i) EXPECT_EQ(a.log.steps[i].total, b.log.steps[i].total);
  EXPECT_EQ(a.train_size + a.val_size, data.size());
  const std::size_t per_epoch = (a.train_size + c.batch_size - 1) / c.batch_size;
  EXPECT_EQ(a.log.steps.size(), per_epoch * c.epochs);
  EXPECT_DOUBLE_EQ(a.log.steps.front().lr, c.lr / 4);
}

TEST_F(TrainFixture, LossesDecomposeInTheLog) {
  TrainConfig c = tiny_train_config(1);
  c.dropout = 0.0;
  const TrainResult r = train(data, c);
  for (const StepRecord& s : r.log.steps)
    EXPECT_NEAR(s.total, s.st + c.weights.asr * s.asr + c.weights.mt * s.mt, 1e-4 * std::max(1.0, s.total));
}

TEST_F(TrainFixture, ZeroAsrWeightLeavesTheCtcHeadUntouched) {
  TrainConfig c = tiny_train_config(1);
  c.weights.asr = 0.0;
  const Model<float> init = make_model<float>(
      [&] {
        ModelConfig m = c.model;
        m.dropout = c.dropout;
        return m;
      }(),
      corpus::source_vocabulary(data.config), corpus::target_vocabulary(data.config), mix_seed(c.seed, 0x1417));
  c.use_all_for_training = true;
  const TrainResult r = train(data, c);
  for (const auto& [name, value] : r.model.params) {
    if (name.rfind("acoustic.ctc", 0) == 0) {
      EXPECT_EQ(value, init.params.at(name)) << name;
    }
  }
  EXPECT_NE(r.model.params.at("dec.out.w"), init.params.at("dec.out.w"));
}

TEST_F(TrainFixture, OverfitsATinyCorpus) {
  TrainConfig c = tiny_train_config(25);
  c.use_all_for_training = true;
  c.dropout = 0.0;
  const TrainResult r = train(data, c);
  const std::size_t per_epoch = r.log.steps.size() / c.epochs;
  auto mean_over = [&](std::size_t epoch) {
    double s = 0;
    for (std::size_t i = epoch * per_epoch; i < (epoch + 1) * per_epoch; ++i) s += r.log.steps[i].st;
    return s / static_cast<double>(per_epoch);
  };
  EXPECT_LT(mean_over(c.epochs - 1), 0.5 * mean_over(0));
  const Model<float> untrained = fixture::tiny_model<float>(data, 3);
  EXPECT_GT(evaluate(r.model, data).bleu, evaluate(untrained, data).bleu);
}

TEST_F(TrainFixture, NonFiniteInputRaisesDivergence) {
  corpus::CorpusManifest bad = data;
  for (auto& u : bad.records) u.frames[0] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig c = tiny_train_config(1);
  c.use_all_for_training = true;
  try {
    train(bad, c);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.last_finite_step(), 0);
  }
}

TEST_F(TrainFixture, EvaluateScoresEveryUtterance) {
  const Model<float> m = fixture::tiny_model<float>(data, 3);
  const auto r = evaluate(m, data);
  EXPECT_EQ(r.utterances, data.size());
  EXPECT_EQ(r.per_utterance.size(), data.size());
  EXPECT_GE(r.bleu, 0.0);
  EXPECT_LE(r.bleu, 100.0);
  EXPECT_GE(r.wer, 0.0);
  EXPECT_NEAR(r.cmi, data.measured_cmi, 1e-9);
  for (const auto& u : r.per_utterance) EXPECT_EQ(u.fallback, u.transcript.empty());
}

TEST_F(TrainFixture, EvaluateRejectsAForeignVocabulary) {
  corpus::CorpusConfig other = data.config;
  other.embedded_vocab_size += 1;
  const auto foreign = corpus::generate_corpus([&] {
    corpus::CorpusConfig c = other;
    c.size = 2;
    return c;
  }());
  const Model<float> m = fixture::tiny_model<float>(data, 3);
  EXPECT_THROW(evaluate(m, foreign), InvalidArgument);
}

}  // namespace
}  // namespace costa
