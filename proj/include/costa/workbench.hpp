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

// Experiment harness: single runs with on-disk artifacts, ablation axes,
// the aggregated ablation table and SVG charts.

#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "costa/corpus.hpp"
#include "costa/report.hpp"
#include "costa/trainer.hpp"

namespace costa::workbench {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Run setup and hashing

struct RunSetup {
  corpus::CorpusConfig corpus;
  TrainConfig train;
  /// Utterances generated after the training corpus for the final score.
  std::size_t test_size = 200;

  KeyValues to_key_values() const {
    KeyValues kv;
    for (const auto& [k, v] : corpus.to_key_values()) kv["corpus." + k] = v;
    for (const auto& [k, v] : train.to_key_values()) kv["train." + k] = v;
    kv["test_size"] = std::to_string(test_size);
    return kv;
  }

  /// Accepts plain keys (applied to both configs) or `corpus.` / `train.`
  /// prefixed keys.
  void apply(const KeyValues& kv) {
    KeyValues c, t;
    for (const auto& [k, v] : kv) {
      if (k.rfind("corpus.", 0) == 0) c[k.substr(7)] = v;
      else if (k.rfind("train.", 0) == 0) t[k.substr(6)] = v;
      else if (k == "test_size") test_size = static_cast<std::size_t>(parse_int(k, v));
      else c[k] = t[k] = v;
    }
    // A bare `seed` is the training seed; the corpus seed must be prefixed.
    c.erase("seed");
    if (kv.count("corpus.seed")) c["seed"] = kv.at("corpus.seed");
    corpus.apply(c);
    train.apply(t);
  }
};

/// FNV-1a over the sorted `key=value` lines; independent of the order in
/// which fields were set or listed in a config file.
inline std::uint64_t config_hash(const KeyValues& kv) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [k, v] : kv) h = fnv1a(k + "=" + v + "\n", h);
  return h;
}

inline std::string hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Runs

struct RunRecord {
  std::string label;
  std::uint64_t seed = 0;
  std::string hash;
  std::string status;  // "ok", "diverged: ...", "failed: ..."
  double bleu = 0.0;
  double wer = 0.0;
  double span_accuracy = 0.0;
  double wall_seconds = 0.0;
  bool reused = false;

  bool ok() const { return status == "ok"; }
};

/// Artifacts of a finished run live in `<root>/runs/<hash>/`.
inline fs::path run_directory(const fs::path& root, const RunSetup& s) {
  return root / "runs" / hex(config_hash(s.to_key_values()));
}

/// Trains into `dir`: model.cstm (+ .meta), train_log.csv, val_log.csv,
/// config.txt. Throws like `train`.
inline TrainResult train_to_directory(const corpus::CorpusManifest& data, const TrainConfig& cfg, const fs::path& dir,
                                      const StepCallback& on_step = {}) {
  fs::create_directories(dir);
  write_key_values(dir / "config.txt", cfg.to_key_values());
  TrainResult r = train(data, cfg, on_step);
  save_checkpoint(dir / "model.cstm", r.model);
  write_train_log(dir, r.log);
  return r;
}

inline void write_evaluation(const fs::path& dir, const metrics::MetricsReport& r) {
  fs::create_directories(dir);
  metrics::write_report_csv(dir / "report.csv", r);
  metrics::write_per_utt_csv(dir / "per_utt.csv", r);
}

/// Runs (or reuses) one cell: corpus, training, held-out evaluation.
/// Failures are recorded in the returned status, never thrown.
class Runner {
 public:
  explicit Runner(fs::path root) : root_(std::move(root)) {}

  RunRecord run(const RunSetup& setup, const std::string& label, const StepCallback& on_step = {}) {
    RunRecord rec;
    rec.label = label;
    rec.seed = setup.train.seed;
    const KeyValues kv = setup.to_key_values();
    rec.hash = hex(config_hash(kv));
    const fs::path dir = root_ / "runs" / rec.hash;
    if (load(dir, rec)) return rec;

    const auto t0 = std::chrono::steady_clock::now();
    try {
      fs::create_directories(dir);
      write_key_values(dir / "setup.txt", kv);
      const corpus::CorpusManifest& train_data = corpus_for(setup.corpus);
      const corpus::CorpusManifest& test_data = heldout_for(setup.corpus, setup.test_size);
      const TrainResult r = train_to_directory(train_data, setup.train, dir, on_step);
      const metrics::MetricsReport report = evaluate(r.model, test_data);
      write_evaluation(dir, report);
      rec.status = "ok";
      rec.bleu = report.bleu;
      rec.wer = report.wer;
      rec.span_accuracy = report.span_accuracy;
    } catch (const DivergenceError& e) {
      rec.status = std::string("diverged: ") + e.what();
    } catch (const std::exception& e) {
      rec.status = std::string("failed: ") + e.what();
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ofstream(dir / "run.txt") << "status=" << rec.status << "\nwall_seconds=" << format_double(rec.wall_seconds)
                                   << '\n';
    return rec;
  }

  const corpus::CorpusManifest& corpus_for(const corpus::CorpusConfig& c) {
    const std::string key = hex(config_hash(c.to_key_values()));
    auto it = corpora_.find(key);
    if (it == corpora_.end()) it = corpora_.emplace(key, corpus::generate_corpus(c)).first;
    return it->second;
  }

  const corpus::CorpusManifest& heldout_for(const corpus::CorpusConfig& c, std::size_t n) {
    const std::string key = hex(config_hash(c.to_key_values())) + "/" + std::to_string(n);
    auto it = heldout_.find(key);
    if (it == heldout_.end()) it = heldout_.emplace(key, corpus::generate_heldout(c, n)).first;
    return it->second;
  }

  const fs::path& root() const { return root_; }

 private:
  static bool load(const fs::path& dir, RunRecord& rec) {
    if (!fs::exists(dir / "run.txt") || !fs::exists(dir / "report.csv")) return false;
    const KeyValues run = read_key_values(dir / "run.txt");
    if (run.count("status") == 0 || run.at("status") != "ok") return false;
    const KeyValues report = metrics::read_report_csv(dir / "report.csv");
    rec.status = "ok";
    rec.bleu = parse_double("bleu", report.at("bleu"));
    rec.wer = parse_double("wer", report.at("wer"));
    rec.span_accuracy = parse_double("span_accuracy", report.at("span_accuracy"));
    if (run.count("wall_seconds")) rec.wall_seconds = parse_double("wall_seconds", run.at("wall_seconds"));
    rec.reused = true;
    return true;
  }

  fs::path root_;
  std::map<std::string, corpus::CorpusManifest> corpora_, heldout_;
};

// ---------------------------------------------------------------------------
// Ablation axes

enum class Axis { kFusion, kPooling, kLoss, kNoise, kSampling, kLambdaGrid, kDataSize };

inline const std::vector<std::pair<Axis, std::string>>& axis_names() {
  static const std::vector<std::pair<Axis, std::string>> names = {
      {Axis::kFusion, "fusion"},          {Axis::kPooling, "pooling"},   {Axis::kLoss, "loss"},
      {Axis::kNoise, "noise"},            {Axis::kSampling, "sampling"}, {Axis::kLambdaGrid, "lambda-grid"},
      {Axis::kDataSize, "data-size"}};
  return names;
}

inline std::string to_string(Axis a) {
  for (const auto& [axis, name] : axis_names())
    if (axis == a) return name;
  return "?";
}

/// Case-insensitive; `_` and `-` are interchangeable (LAMBDA_GRID).
inline Axis parse_axis(std::string s) {
  for (char& ch : s) ch = ch == '_' ? '-' : static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  for (const auto& [axis, name] : axis_names())
    if (name == s) return axis;
  std::string known;
  for (const auto& [axis, name] : axis_names()) known += (known.empty() ? "" : ", ") + name;
  throw InvalidArgument("unknown ablation axis '" + s + "' (expected one of: " + known + ")");
}

inline std::vector<std::string> default_values(Axis a) {
  switch (a) {
    case Axis::kFusion: {
      std::vector<std::string> v;
      for (FusionStrategy f : kAllFusionStrategies) v.push_back(to_string(f));
      return v;
    }
    case Axis::kPooling: return {"mean", "direct"};
    case Axis::kLoss: return {"st-only", "full"};
    case Axis::kNoise: return {"0", "1", "3", "5"};
    case Axis::kSampling: return {"teacher", "scheduled"};
    case Axis::kLambdaGrid: return {"0/0", "0.5/0", "0/0.5", "1/0", "0/1", "1/1", "1.5/1", "1/1.5"};
    case Axis::kDataSize: return {"125", "250", "500"};
  }
  return {};
}

/// `base` with one axis value applied.
inline RunSetup apply_axis_value(Axis a, const std::string& value, RunSetup s) {
  switch (a) {
    case Axis::kFusion: s.train.model.fusion = parse_fusion_strategy(value); break;
    case Axis::kPooling:
      if (value == "mean") s.train.model.fusion = FusionStrategy::kInterleaveSpeechFirst;
      else if (value == "direct") s.train.model.fusion = FusionStrategy::kDirectInterleave;
      else throw InvalidArgument("pooling value must be 'mean' or 'direct', got '" + value + "'");
      break;
    case Axis::kLoss:
      if (value == "st-only") s.train.weights = {0.0, 0.0};
      else if (value == "full") s.train.weights = {1.0, 1.5};
      else throw InvalidArgument("loss value must be 'st-only' or 'full', got '" + value + "'");
      break;
    case Axis::kNoise: s.train.noise_sigma = parse_double("noise", value); break;
    case Axis::kSampling:
      if (value == "teacher") s.train.sampling.mode = SamplingMode::kTeacherForcing;
      else if (value == "scheduled") s.train.sampling.mode = SamplingMode::kScheduled;
      else throw InvalidArgument("sampling value must be 'teacher' or 'scheduled', got '" + value + "'");
      break;
    case Axis::kLambdaGrid: {
      const auto slash = value.find('/');
      if (slash == std::string::npos) throw InvalidArgument("lambda-grid value must look like '1/1.5', got '" + value + "'");
      s.train.weights = {parse_double("lambda_asr", value.substr(0, slash)),
                         parse_double("lambda_mt", value.substr(slash + 1))};
      break;
    }
    case Axis::kDataSize: {
      const long long n = parse_int("data-size", value);
      if (n <= 0) throw InvalidArgument("data-size values must be positive");
      s.corpus.size = static_cast<std::size_t>(n);
      break;
    }
  }
  s.train.validate();
  s.corpus.validate();
  return s;
}

struct AblationSpec {
  Axis axis = Axis::kFusion;
  std::vector<std::string> values;  // empty = the axis defaults
  std::vector<std::uint64_t> seeds{1, 2, 3};

  std::vector<std::string> resolved_values() const { return values.empty() ? default_values(axis) : values; }

  void validate() const {
    if (resolved_values().empty()) throw InvalidArgument("ablation axis has no values");
    if (seeds.empty()) throw InvalidArgument("at least one seed is required");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
      throw InvalidArgument("ablation seeds must be distinct");
  }
};

struct AblationRow {
  std::string value;
  std::vector<RunRecord> runs;

  std::vector<double> bleus() const {
    std::vector<double> v;
    for (const auto& r : runs)
      if (r.ok()) v.push_back(r.bleu);
    return v;
  }
  std::size_t failed() const { return runs.size() - bleus().size(); }
  double mean_bleu() const { return mean_of([](const RunRecord& r) { return r.bleu; }); }
  double mean_wer() const { return mean_of([](const RunRecord& r) { return r.wer; }); }
  double mean_span_accuracy() const { return mean_of([](const RunRecord& r) { return r.span_accuracy; }); }
  double min_bleu() const {
    const auto v = bleus();
    return v.empty() ? 0.0 : *std::min_element(v.begin(), v.end());
  }
  double max_bleu() const {
    const auto v = bleus();
    return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
  }

 private:
  template <typename F>
  double mean_of(F f) const {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& r : runs)
      if (r.ok()) s += f(r), ++n;
    return n ? s / static_cast<double>(n) : 0.0;
  }
};

/// Called before each run starts.
using RunCallback = std::function<void(const std::string& value, std::uint64_t seed, std::size_t index,
                                       std::size_t total)>;

inline std::vector<AblationRow> run_ablation(Runner& runner, const AblationSpec& spec, const RunSetup& base,
                                             const RunCallback& on_run = {}) {
  spec.validate();
  const auto values = spec.resolved_values();
  std::vector<AblationRow> rows;
  std::size_t index = 0;
  const std::size_t total = values.size() * spec.seeds.size();
  for (const std::string& v : values) {
    AblationRow row;
    row.value = v;
    for (std::uint64_t seed : spec.seeds) {
      if (on_run) on_run(v, seed, index, total);
      ++index;
      RunRecord rec;
      try {
        RunSetup s = apply_axis_value(spec.axis, v, base);
        s.train.seed = seed;
        rec = runner.run(s, v);
      } catch (const std::exception& e) {
        rec.label = v;
        rec.seed = seed;
        rec.status = std::string("failed: ") + e.what();
      }
      row.runs.push_back(rec);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline const char* kAblationHeader =
    "axis,value,runs,failed,bleu_mean,bleu_min,bleu_max,bleu_pm,wer_mean,span_accuracy_mean";

/// One row per axis value: mean and range over seeds. No timings, so a
/// rerun reproduces the file exactly.
inline void write_ablation_csv(const fs::path& path, Axis axis, const std::vector<AblationRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << kAblationHeader << '\n';
  for (const AblationRow& r : rows) {
    out << to_string(axis) << ',' << r.value << ',' << r.runs.size() << ',' << r.failed() << ','
        << format_double(r.mean_bleu()) << ',' << format_double(r.min_bleu()) << ',' << format_double(r.max_bleu())
        << ',' << format_double((r.max_bleu() - r.min_bleu()) / 2) << ',' << format_double(r.mean_wer()) << ','
        << format_double(r.mean_span_accuracy()) << '\n';
  }
}

/// Per-run listing with status and wall time.
inline void write_runs_csv(const fs::path& path, const std::vector<AblationRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "value,seed,hash,status,bleu,wer,wall_seconds\n";
  for (const AblationRow& r : rows)
    for (const RunRecord& run : r.runs) {
      std::string status = run.status;
      std::replace(status.begin(), status.end(), ',', ';');
      std::replace(status.begin(), status.end(), '\n', ' ');
      out << run.label << ',' << run.seed << ',' << run.hash << ',' << status << ',' << format_double(run.bleu)
          << ',' << format_double(run.wer) << ',' << format_double(run.wall_seconds) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Charts

struct ChartPoint {
  std::string label;
  double mean = 0, lo = 0, hi = 0;
};

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

/// Line chart with min-max whiskers, categorical x axis.
inline std::string line_chart_svg(const std::string& title, const std::string& y_label,
                                  const std::vector<ChartPoint>& pts) {
  const double w = 640, h = 400, left = 70, right = 20, top = 40, bottom = 90;
  double ymax = 1.0;
  for (const auto& p : pts) ymax = std::max(ymax, p.hi);
  ymax *= 1.1;
  const double pw = w - left - right, ph = h - top - bottom;
  auto x_at = [&](std::size_t i) {
    return left + (pts.size() <= 1 ? pw / 2 : pw * static_cast<double>(i) / static_cast<double>(pts.size() - 1));
  };
  auto y_at = [&](double v) { return top + ph * (1.0 - v / ymax); };
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title)
    << "</text>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
    << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 5; ++k) {
    const double v = ymax * k / 5.0, y = y_at(v);
    s << "<line x1=\"" << left - 4 << "\" y1=\"" << y << "\" x2=\"" << left << "\" y2=\"" << y
      << "\" stroke=\"black\"/>\n";
    s << "<text x=\"" << left - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << v << "</text>\n";
  }
  s << "<text transform=\"translate(18," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << xml_escape(y_label) << "</text>\n";
  std::string path;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double x = x_at(i);
    s << "<line x1=\"" << x << "\" y1=\"" << y_at(pts[i].lo) << "\" x2=\"" << x << "\" y2=\"" << y_at(pts[i].hi)
      << "\" stroke=\"#888\"/>\n";
    s << "<circle cx=\"" << x << "\" cy=\"" << y_at(pts[i].mean) << "\" r=\"4\" fill=\"#1f77b4\"/>\n";
    s << "<text transform=\"translate(" << x << "," << top + ph + 14 << ") rotate(30)\">"
      << xml_escape(pts[i].label) << "</text>\n";
    std::ostringstream seg;
    seg.setf(std::ios::fixed);
    seg.precision(2);
    seg << (i ? " L" : "M") << x << ' ' << y_at(pts[i].mean);
    path += seg.str();
  }
  if (!path.empty()) s << "<path d=\"" << path << "\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n";
  s << "</svg>\n";
  return s.str();
}

inline void write_ablation_chart(const fs::path& path, Axis axis, const std::vector<AblationRow>& rows) {
  std::vector<ChartPoint> pts;
  for (const AblationRow& r : rows) pts.push_back({r.value, r.mean_bleu(), r.min_bleu(), r.max_bleu()});
  std::ofstream(path) << line_chart_svg("BLEU by " + to_string(axis), "held-out BLEU", pts);
}

/// Bar-free chart of mean sentence BLEU per embedded-count bin.
inline void write_bin_chart(const fs::path& path, const metrics::MetricsReport& r) {
  std::vector<ChartPoint> pts;
  for (const auto& b : r.bins) pts.push_back({b.label + " (n=" + std::to_string(b.count) + ")", b.mean, b.mean, b.mean});
  std::ofstream(path) << line_chart_svg("Sentence BLEU by embedded-word count", "mean sentence BLEU", pts);
}

/// Reads an ablation.csv back (for `report`).
inline std::vector<std::vector<std::string>> read_csv_rows(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    rows.push_back(std::move(f));
  }
  return rows;
}

}  // namespace costa::workbench
