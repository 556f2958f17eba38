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

// End-to-end training (Adam, linear warmup, global-norm clipping,
// best-validation-BLEU selection) and corpus evaluation.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "costa/corpus.hpp"
#include "costa/report.hpp"
#include "costa/translator.hpp"

namespace costa {

struct TrainConfig {
  ModelConfig model;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  std::size_t warmup_steps = 200;
  double dropout = 0.15;
  double clip_norm = 1.0;
  std::size_t epochs = 30;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  LossWeights weights;
  SamplingSchedule sampling;
  double noise_sigma = 0.0;
  /// Validate every this many epochs (and after the last one).
  std::size_t val_every = 1;
  /// Skip the validation split and train on every utterance.
  bool use_all_for_training = false;

  /// Optimiser settings of the original large-scale setup.
  void apply_full_scale_hparams() {
    lr = 6e-5;
    warmup_steps = 20000;
  }

  void validate() const {
    if (!(lr > 0)) throw InvalidArgument("learning rate must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("dropout must lie in [0, 1)");
    if (!(clip_norm > 0)) throw InvalidArgument("clip norm must be positive");
    if (batch_size == 0) throw InvalidArgument("batch size must be positive");
    if (val_every == 0) throw InvalidArgument("val_every must be positive");
    if (!(noise_sigma >= 0.0)) throw InvalidArgument("alignment noise sigma must be non-negative");
    weights.validate();
    sampling.validate();
    model.validate();
  }

  /// Learning rate at 1-based optimiser step k.
  double lr_at(std::size_t k) const {
    if (warmup_steps == 0 || k >= warmup_steps) return lr;
    return lr * static_cast<double>(k) / static_cast<double>(warmup_steps);
  }

  KeyValues to_key_values() const {
    KeyValues kv = model.to_key_values();
    kv.erase("dropout");
    kv["lr"] = format_double(lr);
    kv["beta1"] = format_double(beta1);
    kv["beta2"] = format_double(beta2);
    kv["eps"] = format_double(eps);
    kv["warmup_steps"] = std::to_string(warmup_steps);
    kv["dropout"] = format_double(dropout);
    kv["clip_norm"] = format_double(clip_norm);
    kv["epochs"] = std::to_string(epochs);
    kv["batch_size"] = std::to_string(batch_size);
    kv["seed"] = std::to_string(seed);
    kv["lambda_asr"] = format_double(weights.asr);
    kv["lambda_mt"] = format_double(weights.mt);
    kv["sampling"] = sampling.mode == SamplingMode::kScheduled ? "scheduled" : "teacher";
    kv["sampling_p0"] = format_double(sampling.p0);
    kv["sampling_decay"] = format_double(sampling.decay);
    kv["noise_sigma"] = format_double(noise_sigma);
    kv["val_every"] = std::to_string(val_every);
    kv["use_all_for_training"] = use_all_for_training ? "1" : "0";
    return kv;
  }

  /// Overrides fields named in `kv`; unknown keys are ignored.
  void apply(const KeyValues& kv) {
    model.apply(kv);
    auto num = [&](const char* k, double& field) {
      if (auto it = kv.find(k); it != kv.end()) field = parse_double(k, it->second);
    };
    auto count = [&](const char* k, std::size_t& field) {
      if (auto it = kv.find(k); it != kv.end()) {
        const long long v = parse_int(k, it->second);
        if (v < 0) throw InvalidArgument(std::string("'") + k + "' must be non-negative");
        field = static_cast<std::size_t>(v);
      }
    };
    num("lr", lr);
    num("beta1", beta1);
    num("beta2", beta2);
    num("eps", eps);
    count("warmup_steps", warmup_steps);
    num("dropout", dropout);
    num("clip_norm", clip_norm);
    count("epochs", epochs);
    count("batch_size", batch_size);
    if (auto it = kv.find("seed"); it != kv.end()) seed = static_cast<std::uint64_t>(parse_int("seed", it->second));
    num("lambda_asr", weights.asr);
    num("lambda_mt", weights.mt);
    if (auto it = kv.find("sampling"); it != kv.end()) {
      if (it->second == "scheduled") sampling.mode = SamplingMode::kScheduled;
      else if (it->second == "teacher") sampling.mode = SamplingMode::kTeacherForcing;
      else throw InvalidArgument("sampling must be 'teacher' or 'scheduled', got '" + it->second + "'");
    }
    num("sampling_p0", sampling.p0);
    num("sampling_decay", sampling.decay);
    num("noise_sigma", noise_sigma);
    count("val_every", val_every);
    if (auto it = kv.find("use_all_for_training"); it != kv.end())
      use_all_for_training = parse_int("use_all_for_training", it->second) != 0;
  }
};

// ---------------------------------------------------------------------------
// Optimiser

/// Adam with bias correction over a name -> Array parameter map.
class Adam {
 public:
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(Parameters<float>& params, const Gradients<float>& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, p] : params) {
      auto g = grads.find(name);
      if (g == grads.end()) continue;
      auto [mi, fresh_m] = m_.try_emplace(name, p.shape(), 0.0f);
      auto [vi, fresh_v] = v_.try_emplace(name, p.shape(), 0.0f);
      float* m = mi->second.data();
      float* v = vi->second.data();
      const float* gr = g->second.data();
      float* w = p.data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = static_cast<float>(beta1_ * m[i] + (1.0 - beta1_) * gr[i]);
        v[i] = static_cast<float>(beta2_ * v[i] + (1.0 - beta2_) * static_cast<double>(gr[i]) * gr[i]);
        const double mhat = m[i] / c1, vhat = v[i] / c2;
        w[i] = static_cast<float>(w[i] - lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::map<std::string, Array<float>> m_, v_;
};

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
inline double clip_global_norm(Gradients<float>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (float x : g.values()) sq += static_cast<double>(x) * x;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const float s = static_cast<float>(max_norm / norm);
    for (auto& [name, g] : grads)
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= s;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Data

/// True for the ~10% of utterances held out for validation. Depends only on
/// the utterance id.
inline bool is_validation(const std::string& id) { return fnv1a(id) % 10 == 0; }

template <typename T>
std::vector<Example> make_examples(const std::vector<const corpus::Utterance*>& records, const Model<T>& m) {
  std::vector<Example> out;
  out.reserve(records.size());
  for (const corpus::Utterance* u : records)
    out.push_back({u->id, &u->frames, m.source.encode(strip_tags(u->source)), m.target.encode(u->target)});
  return out;
}

template <typename T>
void require_matching_vocabularies(const Model<T>& m, const corpus::CorpusConfig& c) {
  if (!(m.source == corpus::source_vocabulary(c)) || !(m.target == with_specials(corpus::target_vocabulary(c))))
    throw InvalidArgument("model vocabularies do not match the corpus (" + std::to_string(m.source.size()) +
                          " source / " + std::to_string(m.target.size()) + " target tokens in the model)");
}

// ---------------------------------------------------------------------------
// Evaluation

template <typename T>
metrics::UtteranceScore score_utterance(const Model<T>& m, const corpus::Utterance& u,
                                        const std::unordered_set<std::string>& embedded) {
  const Translation tr = translate(m, u.frames);
  metrics::UtteranceScore s;
  s.id = u.id;
  s.hypothesis = m.target.decode(tr.target);
  s.reference = u.target;
  s.transcript = m.source.decode(tr.transcript);
  s.gold_transcript = strip_tags(u.source);
  s.fallback = tr.fallback;
  s.wer = metrics::wer(s.transcript, s.gold_transcript);
  s.bleu_sentence = metrics::sentence_bleu(s.hypothesis, s.reference);
  s.cmi = metrics::compute_cmi(u.source);
  s.embedded_count = static_cast<int>(
      std::count_if(u.source.begin(), u.source.end(), [](const TaggedToken& t) { return t.lang == Lang::kEmbedded; }));
  const metrics::SpanScore sp = metrics::span_accuracy(u.source, s.reference, s.hypothesis,
                                                       [&](const std::string& w) { return embedded.count(w) > 0; });
  s.spans_total = sp.total;
  s.spans_matched = sp.matched;
  return s;
}

inline std::unordered_set<std::string> embedded_words(const corpus::CorpusConfig& c) {
  std::unordered_set<std::string> out;
  for (int i = 0; i < c.embedded_vocab_size; ++i) out.insert(corpus::embedded_token(i));
  return out;
}

/// Translates every record and scores it.
template <typename T>
metrics::MetricsReport evaluate(const Model<T>& m, const corpus::CorpusConfig& config,
                                const std::vector<const corpus::Utterance*>& records) {
  require_matching_vocabularies(m, config);
  const auto embedded = embedded_words(config);
  std::vector<metrics::UtteranceScore> rows;
  rows.reserve(records.size());
  for (const corpus::Utterance* u : records) rows.push_back(score_utterance(m, *u, embedded));
  return metrics::summarize(std::move(rows));
}

template <typename T>
metrics::MetricsReport evaluate(const Model<T>& m, const corpus::CorpusManifest& data) {
  std::vector<const corpus::Utterance*> all;
  for (const auto& u : data.records) all.push_back(&u);
  return evaluate(m, data.config, all);
}

// ---------------------------------------------------------------------------
// Training

struct StepRecord {
  std::size_t step = 0;
  double total = 0, st = 0, asr = 0, mt = 0, lr = 0;
};

struct ValRecord {
  std::size_t epoch = 0;
  double bleu = 0, wer = 0;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<ValRecord> validation;
};

struct TrainResult {
  Model<float> model;  // best-validation parameters (final ones without a validation split)
  TrainLog log;
  std::size_t best_epoch = 0;
  double best_bleu = -1.0;
  std::size_t train_size = 0, val_size = 0;
  std::size_t epochs_run = 0;
};

/// Called after every optimiser step with the running log; for progress.
using StepCallback = std::function<void(const StepRecord&, std::size_t epoch)>;
/// Called after each epoch (1-based) with the current parameters; returning
/// true stops training after that epoch.
using EpochCallback = std::function<bool(std::size_t epoch, const Model<float>&)>;

inline void write_train_log(const std::filesystem::path& dir, const TrainLog& log) {
  std::ofstream t(dir / "train_log.csv");
  if (!t) throw Error("cannot write " + (dir / "train_log.csv").string());
  t << "step,total,st,asr,mt,lr\n";
  for (const StepRecord& r : log.steps)
    t << r.step << ',' << format_double(r.total) << ',' << format_double(r.st) << ',' << format_double(r.asr) << ','
      << format_double(r.mt) << ',' << format_double(r.lr) << '\n';
  std::ofstream v(dir / "val_log.csv");
  if (!v) throw Error("cannot write " + (dir / "val_log.csv").string());
  v << "epoch,bleu,wer\n";
  for (const ValRecord& r : log.validation)
    v << r.epoch << ',' << format_double(r.bleu) << ',' << format_double(r.wer) << '\n';
}

inline TrainResult train(const corpus::CorpusManifest& data, TrainConfig cfg, const StepCallback& on_step = {},
                         const EpochCallback& on_epoch = {}) {
  cfg.model.dropout = cfg.dropout;
  cfg.validate();
  if (data.records.empty()) throw InvalidArgument("cannot train on an empty corpus");

  TrainResult result;
  result.model = make_model<float>(cfg.model, corpus::source_vocabulary(data.config),
                                   corpus::target_vocabulary(data.config), mix_seed(cfg.seed, 0x1417));
  Model<float>& model = result.model;

  std::vector<const corpus::Utterance*> train_set, val_set;
  for (const auto& u : data.records)
    (!cfg.use_all_for_training && is_validation(u.id) ? val_set : train_set).push_back(&u);
  if (train_set.empty()) throw InvalidArgument("training split is empty");
  result.train_size = train_set.size();
  result.val_size = val_set.size();
  const std::vector<Example> examples = make_examples(train_set, model);

  Adam adam(cfg.beta1, cfg.beta2, cfg.eps);
  Parameters<float> best = model.params;
  std::size_t step = 0;
  std::vector<std::size_t> order(examples.size());

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 0x5eed0000 + epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::mt19937_64 sampling_rng(mix_seed(cfg.seed, 0x5a3e0000 + epoch));

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<Example> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i)
        batch.push_back(examples[order[i]]);
      BatchOptions opt;
      opt.weights = cfg.weights;
      opt.noise_sigma = cfg.noise_sigma;
      opt.noise_seed = mix_seed(cfg.seed, 0x0153 + epoch);
      if (cfg.sampling.gold_probability(epoch) < 1.0) {
        for (std::size_t i = 0; i < batch.size(); ++i) opt.use_asr_transcript.push_back(cfg.sampling.draw_asr(epoch, sampling_rng));
      }

      ++step;
      Graph<float> g(&model.params, true);
      g.set_training(cfg.dropout > 0);
      g.seed(mix_seed(cfg.seed, step));
      const LossTerms<float> terms = batch_loss(g, model, batch, opt);
      const double total = terms.total.value().item();
      if (!std::isfinite(total))
        throw DivergenceError("loss became non-finite at step " + std::to_string(step),
                              static_cast<long>(step) - 1);
      Gradients<float> grads = g.backward(terms.total);
      clip_global_norm(grads, cfg.clip_norm);
      const double lr = cfg.lr_at(step);
      adam.step(model.params, grads, lr);

      const StepRecord rec{step, total, terms.st, terms.asr, terms.mt, lr};
      result.log.steps.push_back(rec);
      if (on_step) on_step(rec, epoch);
    }

    const bool last = epoch + 1 == cfg.epochs;
    if (!val_set.empty() && ((epoch + 1) % cfg.val_every == 0 || last)) {
      const metrics::MetricsReport r = evaluate(model, data.config, val_set);
      result.log.validation.push_back({epoch + 1, r.bleu, r.wer});
      if (r.bleu > result.best_bleu) {
        result.best_bleu = r.bleu;
        result.best_epoch = epoch + 1;
        best = model.params;
      }
    }
    result.epochs_run = epoch + 1;
    if (on_epoch && on_epoch(epoch + 1, model)) break;
  }
  if (!val_set.empty()) {
    model.params = std::move(best);
  } else {
    result.best_epoch = result.epochs_run;
  }
  return result;
}

}  // namespace costa
