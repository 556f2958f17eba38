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
#include <random>

#include "costa/acoustic.hpp"
#include "support/oracles.hpp"

using namespace costa;

namespace {

using G = Graph<double>;

AcousticConfig tiny() {
  AcousticConfig c;
  c.feature_dim = 3;
  c.model_dim = 8;
  c.heads = 2;
  c.ff_dim = 8;
  c.encoder_blocks = 1;
  c.vocab_size = 5;
  return c;
}

Array<double> random_frames(std::size_t t, std::size_t f, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return random_normal<double>({t, f}, rng);
}

TEST(EncodeSpeech, FactorFourLength) {
  AcousticConfig c;
  EXPECT_EQ(c.downsampled_length(16), 4u);
  EXPECT_EQ(c.downsampling_factor(), 4u);
  Parameters<double> p;
  ParamInit<double> init(p, 1);
  init_acoustic(init, c);
  p["frames"] = random_frames(16, c.feature_dim, 2);
  G g(&p, false);
  const Var<double> out = encode_speech(g, g.input("frames"), c);
  EXPECT_EQ(out.rows(), 4u);
  EXPECT_EQ(out.cols(), c.model_dim);
}

TEST(EncodeSpeech, LengthFormulaAppliedPerLayer) {
  AcousticConfig c;
  c.conv = {{3, 2}, {2, 3}};
  // 20 -> ceil(18/2) = 9 -> ceil(8/3) = 3
  EXPECT_EQ(c.downsampled_length(20), 3u);
  EXPECT_EQ(c.min_frames(), 5u);
  EXPECT_EQ(c.downsampled_length(4), 0u);
  c.conv = AcousticConfig::stride4_preset();
  EXPECT_EQ(c.downsampling_factor(), 16u);
  EXPECT_EQ(c.downsampled_length(64), 4u);
}

TEST(EncodeSpeech, IdentityConfigurationIsProjection) {
  AcousticConfig c = tiny();
  c.conv = {{1, 1}};
  c.encoder_blocks = 0;
  Parameters<double> p;
  ParamInit<double> init(p, 3);
  init_acoustic(init, c);
  Array<double> eye = Array<double>::matrix(c.model_dim, c.model_dim, 0.0);
  for (std::size_t i = 0; i < c.model_dim; ++i) eye(i, i) = 1.0;
  p["acoustic.conv0.w"] = eye;
  const Array<double> frames = random_frames(7, c.feature_dim, 4);
  p["frames"] = frames;
  G g(&p, false);
  const Array<double> out = encode_speech(g, g.input("frames"), c).value();
  const Array<double>& w = p["acoustic.in.w"];
  const Array<double>& b = p["acoustic.in.b"];
  for (std::size_t t = 0; t < 7; ++t)
    for (std::size_t k = 0; k < c.model_dim; ++k) {
      double want = b[k];
      for (std::size_t f = 0; f < c.feature_dim; ++f) want += frames(t, f) * w(f, k);
      EXPECT_NEAR(out(t, k), want, 1e-12);
    }
}

TEST(EncodeSpeech, TooShortNamesMinimum) {
  const AcousticConfig c = tiny();
  Parameters<double> p;
  ParamInit<double> init(p, 1);
  init_acoustic(init, c);
  p["frames"] = random_frames(3, c.feature_dim, 1);
  G g(&p, false);
  try {
    encode_speech(g, g.input("frames"), c);
    FAIL() << "expected rejection";
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("at least 4"), std::string::npos) << e.what();
  }
}

TEST(EncodeSpeech, WrongFeatureDimIsShapeError) {
  const AcousticConfig c = tiny();
  Parameters<double> p;
  ParamInit<double> init(p, 1);
  init_acoustic(init, c);
  p["frames"] = random_frames(8, c.feature_dim + 1, 1);
  G g(&p, false);
  EXPECT_THROW(encode_speech(g, g.input("frames"), c), ShapeError);
}

TEST(EncodeSpeech, GradientWrtFramesMatchesFiniteDifferences) {
  const AcousticConfig c = tiny();
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Parameters<double> p;
    ParamInit<double> init(p, seed);
    init_acoustic(init, c);
    p["frames"] = random_frames(9, c.feature_dim, seed + 10);
    GradCheckOptions opt;
    opt.names = {"frames"};
    const auto r = grad_check<double>([&](G& g) { return sum(encode_speech(g, g.input("frames"), c)); }, p, opt);
    EXPECT_LE(r.max_rel_error, 1e-4) << "seed " << seed;
  }
}

TEST(CtcLogits, ShapeNormalisationAndDeterminism) {
  const AcousticConfig c = tiny();
  Parameters<double> p;
  ParamInit<double> init(p, 5);
  init_acoustic(init, c);
  p["frames"] = random_frames(12, c.feature_dim, 6);
  auto run = [&] {
    G g(&p, false);
    return ctc_logits(g, encode_speech(g, g.input("frames"), c)).value();
  };
  const Array<double> a = run();
  EXPECT_EQ(a.rows(), c.downsampled_length(12));
  EXPECT_EQ(a.cols(), c.vocab_size + 1);
  G g(&p, false);
  const Array<double> ls = log_softmax(g.constant(a)).value();
  for (std::size_t t = 0; t < ls.rows(); ++t) {
    double total = 0;
    for (std::size_t k = 0; k < ls.cols(); ++k) total += std::exp(ls(t, k));
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
  EXPECT_EQ(run(), a);

  Parameters<double> q;
  ParamInit<double> other(q, 5);
  init_acoustic(other, c);
  EXPECT_EQ(q, [&] { auto r = p; r.erase("frames"); return r; }());
}

double loss_of(const Array<double>& logits, const std::vector<int>& labels) {
  G g;
  return ctc_loss(g.constant(logits), labels).value().item();
}

TEST(CtcLoss, SingleFrameSinglePath) {
  const Array<double> l = Array<double>::matrix(1, 4, {0.3, -1.0, 2.0, 0.5});
  G g;
  const Array<double> ls = log_softmax(g.constant(l)).value();
  EXPECT_NEAR(loss_of(l, {2}), -ls(0, 2), 1e-12);
}

TEST(CtcLoss, UniformFourFramesTwoLabels) {
  // classes a, b, c + blank, uniform p = 1/4. A valid path is
  // blank* a+ blank* b+ blank*: 2 spare frames over 5 runs, C(6,4) = 15.
  const Array<double> l = Array<double>::matrix(4, 4, 0.0);
  const double p = oracle::ctc_probability(std::vector<double>(16, 0.0), 4, 4, {0, 1});
  EXPECT_NEAR(loss_of(l, {0, 1}), -std::log(p), 1e-9);
  EXPECT_NEAR(p, 15.0 / 256.0, 1e-15);
}

TEST(CtcLoss, MatchesBruteForceEnumeration) {
  std::mt19937_64 rng(2024);
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t frames = 1 + rng() % 8;
    const std::size_t classes = 3 + rng() % 2;  // labels {0..classes-2}, blank last
    const std::size_t m = rng() % 5;
    std::vector<int> labels(m);
    for (auto& x : labels) x = static_cast<int>(rng() % (classes - 1));
    if (m == 0 || ctc_min_frames(labels) > frames) continue;
    const Array<double> l = random_normal<double>({frames, classes}, rng, 2.0);
    const double p = oracle::ctc_probability(l.values(), frames, classes, labels);
    const double loss = loss_of(l, labels);
    EXPECT_NEAR(loss, -std::log(p), 1e-6) << "T=" << frames << " M=" << m;
    EXPECT_GE(loss, 0.0);
    ++checked;
  }
  EXPECT_GT(checked, 100);
}

TEST(CtcLoss, RepeatNeedsSeparatingBlank) {
  const Array<double> l = Array<double>::matrix(2, 3, 0.0);
  G g;
  EXPECT_THROW(ctc_loss(g.constant(l), {0, 0}), InfeasibleError);
  EXPECT_NO_THROW(ctc_loss(g.constant(Array<double>::matrix(3, 3, 0.0)), {0, 0}));
  EXPECT_EQ(ctc_min_frames({0, 0, 1, 1, 1}), 8u);
}

TEST(CtcLoss, LabelOutOfRangeRejected) {
  G g;
  EXPECT_THROW(ctc_loss(g.constant(Array<double>::matrix(3, 3, 0.0)), {2}), InvalidArgument);
}

TEST(CtcLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t frames = 3 + rng() % 6;
    std::vector<int> labels(1 + rng() % 3);
    for (auto& x : labels) x = static_cast<int>(rng() % 4);
    if (ctc_min_frames(labels) > frames) continue;
    Bindings<double> b{{"x", random_normal<double>({frames, 5}, rng, 1.5)}};
    const auto r = grad_check<double>([&](G& g) { return ctc_loss(g.input("x"), labels); }, b);
    EXPECT_LE(r.max_rel_error, 1e-4);
  }
}

TEST(CtcLoss, GradientThroughEncoder) {
  const AcousticConfig c = tiny();
  Parameters<double> p;
  ParamInit<double> init(p, 8);
  init_acoustic(init, c);
  p["frames"] = random_frames(16, c.feature_dim, 9);
  GradCheckOptions opt;
  opt.max_coords_per_input = 6;
  const auto r = grad_check<double>(
      [&](G& g) { return ctc_loss(ctc_logits(g, encode_speech(g, g.input("frames"), c)), {1, 3}); }, p, opt);
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst_input;
}

Array<double> one_hot_rows(const std::vector<int>& argmax, std::size_t classes) {
  Array<double> l = Array<double>::matrix(argmax.size(), classes, 0.0);
  for (std::size_t t = 0; t < argmax.size(); ++t) l(t, static_cast<std::size_t>(argmax[t])) = 1.0;
  return l;
}

TEST(GreedyDecode, CollapseAndBlankRules) {
  const int blank = 3;
  EXPECT_EQ(ctc_greedy_decode(one_hot_rows({0, 0, blank, 1}, 4)), (std::vector<int>{0, 1}));
  EXPECT_TRUE(ctc_greedy_decode(one_hot_rows({blank, blank, blank}, 4)).empty());
  EXPECT_EQ(ctc_greedy_decode(one_hot_rows({0, blank, 0}, 4)), (std::vector<int>{0, 0}));
}

TEST(GreedyDecode, TiesGoToLowestIndex) {
  EXPECT_EQ(ctc_greedy_decode(Array<double>::matrix(1, 4, 0.0)), (std::vector<int>{0}));
  EXPECT_EQ(ctc_greedy_decode(Array<double>::matrix(1, 4, {0.0, 1.0, 1.0, 1.0})), (std::vector<int>{1}));
}

TEST(GreedyDecode, InvariantToRowShift) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    Array<double> l = random_normal<double>({6, 5}, rng);
    const auto before = ctc_greedy_decode(l);
    std::uniform_real_distribution<double> shift(-50, 50);
    for (std::size_t t = 0; t < l.rows(); ++t) {
      const double s = shift(rng);
      for (std::size_t k = 0; k < l.cols(); ++k) l(t, k) += s;
    }
    EXPECT_EQ(ctc_greedy_decode(l), before);
  }
}

}  // namespace
