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

// costa: corpus generation, training, evaluation and ablation sweeps.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 divergence.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "costa/workbench.hpp"

namespace fs = std::filesystem;
using namespace costa;

namespace {

constexpr int kUsage = 1;
constexpr int kRuntime = 2;
constexpr int kDiverged = 3;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string config;

  KeyValues config_values() const { return config.empty() ? KeyValues{} : read_key_values(config); }
};

// Flag values override the config file; unset flags leave it alone.
template <typename T>
void put(KeyValues& kv, const std::string& key, const std::optional<T>& v) {
  if (!v) return;
  if constexpr (std::is_same_v<T, std::string>) kv[key] = *v;
  else if constexpr (std::is_floating_point_v<T>) kv[key] = format_double(*v);
  else kv[key] = std::to_string(*v);
}

void print_report(const metrics::MetricsReport& r) {
  std::printf("utterances     %zu\n", r.utterances);
  std::printf("BLEU           %.2f\n", r.bleu);
  std::printf("WER            %.2f%%\n", 100.0 * r.wer);
  std::printf("CMI            %.2f%%\n", 100.0 * r.cmi);
  std::printf("span accuracy  %.2f%% (%zu spans)\n", r.span_accuracy, r.spans_total);
  std::printf("flagged        %zu\n", r.flagged);
  if (r.r_squared) std::printf("R^2            %.4f\n", *r.r_squared);
  else std::printf("R^2            undefined\n");
  for (const auto& b : r.bins) std::printf("  bin %-8s n=%-5zu mean sentence BLEU %.2f\n", b.label.c_str(), b.count, b.mean);
}

void print_ablation(const std::vector<std::vector<std::string>>& rows) {
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) std::printf(i ? " %-12s" : "%-22s", r[i].c_str());
    std::printf("\n");
  }
}

// ---------------------------------------------------------------------------

struct GenerateOpts {
  std::optional<double> cmi, frame_noise;
  std::optional<std::size_t> n;
  unsigned workers = 1;
};

int cmd_generate(const Globals& g, const GenerateOpts& o) {
  KeyValues kv = g.config_values();
  put(kv, "cmi", o.cmi);
  put(kv, "n", o.n);
  put(kv, "frame_noise", o.frame_noise);
  put(kv, "seed", g.seed);
  corpus::CorpusConfig c;
  c.apply(kv);
  c.validate();
  const fs::path out = g.out.empty() ? "data" : g.out;
  const auto m = corpus::generate_corpus(c, o.workers);
  corpus::write_manifest(m, out);
  std::printf("wrote %zu utterances to %s\nmeasured CMI %.4f (target %.4f)\n", m.size(), out.string().c_str(),
              m.measured_cmi, c.target_cmi);
  return 0;
}

struct TrainOpts {
  std::string corpus;
  std::optional<std::string> fusion, sampling;
  std::optional<std::size_t> epochs, batch_size, warmup;
  std::optional<double> lr, dropout, lambda_asr, lambda_mt, noise;
  bool quiet = false;
};

int cmd_train(const Globals& g, const TrainOpts& o) {
  KeyValues kv = g.config_values();
  put(kv, "fusion", o.fusion);
  put(kv, "sampling", o.sampling);
  put(kv, "epochs", o.epochs);
  put(kv, "batch_size", o.batch_size);
  put(kv, "warmup_steps", o.warmup);
  put(kv, "lr", o.lr);
  put(kv, "dropout", o.dropout);
  put(kv, "lambda_asr", o.lambda_asr);
  put(kv, "lambda_mt", o.lambda_mt);
  put(kv, "noise_sigma", o.noise);
  put(kv, "seed", g.seed);
  TrainConfig cfg;
  cfg.apply(kv);
  cfg.model.dropout = cfg.dropout;
  cfg.validate();
  const auto data = corpus::read_manifest(o.corpus);
  const fs::path out = g.out.empty() ? "run" : g.out;
  std::size_t last_epoch = static_cast<std::size_t>(-1);
  const auto r = workbench::train_to_directory(data, cfg, out, [&](const StepRecord& s, std::size_t epoch) {
    if (o.quiet || epoch == last_epoch) return;
    last_epoch = epoch;
    std::fprintf(stderr, "epoch %zu step %zu loss %.4f\n", epoch + 1, s.step, s.total);
  });
  std::printf("trained %zu epochs on %zu utterances (%zu held for validation)\n", cfg.epochs, r.train_size,
              r.val_size);
  if (r.val_size) std::printf("best validation BLEU %.2f at epoch %zu\n", r.best_bleu, r.best_epoch);
  std::printf("checkpoint %s\n", (out / "model.cstm").string().c_str());
  return 0;
}

struct EvalOpts {
  std::string checkpoint, corpus;
};

int cmd_eval(const Globals& g, const EvalOpts& o) {
  const Model<float> m = load_checkpoint(o.checkpoint);
  const auto data = corpus::read_manifest(o.corpus);
  const auto r = evaluate(m, data);
  const fs::path out = g.out.empty() ? "eval" : g.out;
  workbench::write_evaluation(out, r);
  workbench::write_bin_chart(out / "bins.svg", r);
  print_report(r);
  return 0;
}

struct AblateOpts {
  std::string axis;
  std::vector<std::string> values;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::optional<std::size_t> n, epochs, test_size;
  bool charts = true;
};

int cmd_ablate(const Globals& g, const AblateOpts& o) {
  workbench::RunSetup base;
  base.corpus.seed = 7;
  base.apply(g.config_values());
  if (g.seed) base.corpus.seed = *g.seed;
  if (o.n) base.corpus.size = *o.n;
  if (o.epochs) base.train.epochs = *o.epochs;
  if (o.test_size) base.test_size = *o.test_size;
  workbench::AblationSpec spec;
  spec.axis = workbench::parse_axis(o.axis);
  spec.values = o.values;
  spec.seeds = o.seeds;
  spec.validate();
  const fs::path out = g.out.empty() ? "ablation" : g.out;
  fs::create_directories(out);
  workbench::Runner runner(out);
  const auto rows = workbench::run_ablation(runner, spec, base, [](const std::string& v, std::uint64_t seed,
                                                                   std::size_t i, std::size_t n) {
    std::fprintf(stderr, "[%zu/%zu] %s seed %llu\n", i + 1, n, v.c_str(), static_cast<unsigned long long>(seed));
  });
  workbench::write_ablation_csv(out / "ablation.csv", spec.axis, rows);
  workbench::write_runs_csv(out / "runs.csv", rows);
  if (o.charts) workbench::write_ablation_chart(out / ("ablation_" + workbench::to_string(spec.axis) + ".svg"), spec.axis, rows);
  print_ablation(workbench::read_csv_rows(out / "ablation.csv"));
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.failed();
  if (failed) {
    std::fprintf(stderr, "%zu run(s) failed; see runs.csv\n", failed);
    return kRuntime;
  }
  return 0;
}

struct ReportOpts {
  std::string in;
};

// Recomputes aggregates from per_utt.csv and/or prints an ablation table.
int cmd_report(const Globals& g, const ReportOpts& o) {
  const fs::path in = o.in.empty() ? (g.out.empty() ? fs::path(".") : fs::path(g.out)) : fs::path(o.in);
  bool any = false;
  if (fs::exists(in / "per_utt.csv")) {
    const auto r = metrics::summarize(metrics::read_per_utt_csv(in / "per_utt.csv"));
    print_report(r);
    metrics::write_report_csv(in / "report.csv", r);
    workbench::write_bin_chart(in / "bins.svg", r);
    any = true;
  }
  if (fs::exists(in / "ablation.csv")) {
    const auto rows = workbench::read_csv_rows(in / "ablation.csv");
    print_ablation(rows);
    if (rows.size() > 1) {
      std::vector<workbench::ChartPoint> pts;
      for (std::size_t i = 1; i < rows.size(); ++i)
        pts.push_back({rows[i].at(1), parse_double("bleu_mean", rows[i].at(4)), parse_double("bleu_min", rows[i].at(5)),
                       parse_double("bleu_max", rows[i].at(6))});
      std::ofstream(in / ("ablation_" + rows[1].at(0) + ".svg"))
          << workbench::line_chart_svg("BLEU by " + rows[1].at(0), "held-out BLEU", pts);
    }
    any = true;
  }
  if (!any) throw InvalidArgument("no per_utt.csv or ablation.csv in " + in.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"costa: code-switched speech translation workbench"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Random seed (corpus seed for generate/ablate, training seed for train)");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--config", g.config, "key=value config file")->check(CLI::ExistingFile);

  GenerateOpts gen;
  auto* generate = app.add_subcommand("generate", "Generate a synthetic code-switched corpus");
  generate->add_option("--cmi", gen.cmi, "Target code-mixing index in [0, 0.5]");
  generate->add_option("--n", gen.n, "Number of utterances");
  generate->add_option("--frame-noise", gen.frame_noise, "Std of the Gaussian frame noise");
  generate->add_option("--workers", gen.workers, "Generator threads")->check(CLI::PositiveNumber);

  TrainOpts tr;
  auto* train = app.add_subcommand("train", "Train a model on a corpus directory");
  train->add_option("--corpus", tr.corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--fusion", tr.fusion, "Fusion strategy");
  train->add_option("--sampling", tr.sampling, "teacher or scheduled");
  train->add_option("--epochs", tr.epochs);
  train->add_option("--batch-size", tr.batch_size);
  train->add_option("--warmup", tr.warmup, "Linear warmup steps");
  train->add_option("--lr", tr.lr);
  train->add_option("--dropout", tr.dropout);
  train->add_option("--lambda-asr", tr.lambda_asr);
  train->add_option("--lambda-mt", tr.lambda_mt);
  train->add_option("--noise", tr.noise, "Alignment noise sigma (training only)");
  train->add_flag("--quiet", tr.quiet, "No per-epoch progress");

  EvalOpts ev;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a corpus");
  eval->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--corpus", ev.corpus)->required()->check(CLI::ExistingDirectory);

  AblateOpts ab;
  auto* ablate = app.add_subcommand("ablate", "Run an ablation axis over several seeds");
  ablate->add_option("--axis", ab.axis, "fusion, pooling, loss, noise, sampling, lambda-grid or data-size")->required();
  ablate->add_option("--values", ab.values, "Axis values (default: the axis's standard list)")->delimiter(',');
  ablate->add_option("--seeds", ab.seeds, "Training seeds")->delimiter(',');
  ablate->add_option("--n", ab.n, "Training corpus size");
  ablate->add_option("--epochs", ab.epochs);
  ablate->add_option("--test-size", ab.test_size, "Held-out utterances per run");
  ablate->add_flag("!--no-charts", ab.charts, "Skip the SVG chart");

  ReportOpts rp;
  auto* report = app.add_subcommand("report", "Recompute and print results from an eval or ablation directory");
  report->add_option("--in", rp.in, "Directory holding per_utt.csv and/or ablation.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*generate) return cmd_generate(g, gen);
    if (*train) return cmd_train(g, tr);
    if (*eval) return cmd_eval(g, ev);
    if (*ablate) return cmd_ablate(g, ab);
    if (*report) return cmd_report(g, rp);
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "error: %s (last finite step %ld)\n", e.what(), e.last_finite_step());
    return kDiverged;
  } catch (const InvalidArgument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntime;
  }
  return kUsage;
}
