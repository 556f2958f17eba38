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

// Evaluation report: per-utterance scores and the corpus aggregates derived
// from them, plus their CSV forms.

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "costa/keyvalue.hpp"
#include "costa/metrics.hpp"

namespace costa::metrics {

struct UtteranceScore {
  std::string id;
  double wer = 0.0;
  double bleu_sentence = 0.0;
  double cmi = 0.0;
  int embedded_count = 0;
  std::size_t spans_total = 0;
  std::size_t spans_matched = 0;
  bool fallback = false;
  Tokens hypothesis;       // predicted translation
  Tokens reference;        // gold translation
  Tokens transcript;       // ASR output
  Tokens gold_transcript;  // source tokens

  friend bool operator==(const UtteranceScore&, const UtteranceScore&) = default;
};

/// Bins for embedded-word counts at this corpus scale.
inline std::vector<Bin> report_bins() { return {{1, 2}, {3, 4}, {5, 6}, {7, 1000}}; }

struct MetricsReport {
  std::size_t utterances = 0;
  double bleu = 0.0;
  double wer = 0.0;
  double cmi = 0.0;
  double span_accuracy = 0.0;
  std::size_t spans_total = 0;
  std::size_t flagged = 0;
  std::vector<BinScore> bins;
  /// Unset when the fit is undefined (fewer than two distinct counts).
  std::optional<double> r_squared;
  std::vector<UtteranceScore> per_utterance;
};

/// Corpus aggregates from per-utterance rows: BLEU over all hypotheses, WER
/// as total edits over total reference tokens, CMI as the mean, span
/// accuracy micro-averaged, and sentence BLEU binned by embedded count.
inline MetricsReport summarize(std::vector<UtteranceScore> rows, const std::vector<Bin>& bins = report_bins()) {
  MetricsReport r;
  r.utterances = rows.size();
  if (rows.empty()) {
    for (const Bin& b : bins) r.bins.push_back({b.label(), 0, 0.0});
    return r;
  }
  std::vector<Tokens> hyps, refs;
  std::size_t edits = 0, ref_tokens = 0;
  std::vector<SpanScore> spans;
  std::vector<int> counts;
  std::vector<double> scores;
  for (const UtteranceScore& u : rows) {
    hyps.push_back(u.hypothesis);
    refs.push_back(u.reference);
    edits += edit_distance(u.transcript, u.gold_transcript);
    ref_tokens += u.gold_transcript.size();
    r.cmi += u.cmi;
    spans.push_back({u.spans_total, u.spans_matched});
    r.spans_total += u.spans_total;
    counts.push_back(u.embedded_count);
    scores.push_back(u.bleu_sentence);
    r.flagged += u.fallback ? 1 : 0;
  }
  r.bleu = bleu(hyps, refs);
  r.wer = ref_tokens == 0 ? 0.0 : static_cast<double>(edits) / static_cast<double>(ref_tokens);
  r.cmi /= static_cast<double>(rows.size());
  r.span_accuracy = aggregate_span_accuracy(spans);
  try {
    const Correlation c = bin_and_correlate(counts, scores, bins);
    r.bins = c.bins;
    r.r_squared = c.r_squared;
  } catch (const InvalidArgument&) {
    for (const Bin& b : bins) {
      BinScore s{b.label(), 0, 0.0};
      for (std::size_t i = 0; i < counts.size(); ++i)
        if (counts[i] >= b.lo && counts[i] <= b.hi) ++s.count, s.mean += scores[i];
      if (s.count) s.mean /= static_cast<double>(s.count);
      r.bins.push_back(s);
    }
  }
  r.per_utterance = std::move(rows);
  return r;
}

inline const char* kPerUttHeader =
    "id,wer,bleu_sentence,cmi,embedded_count,spans_total,spans_matched,fallback,hypothesis,reference,transcript,"
    "gold_transcript";

inline void write_per_utt_csv(const std::filesystem::path& path, const MetricsReport& r) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << kPerUttHeader << '\n';
  auto join = [](const Tokens& t) {
    std::string s;
    for (const auto& x : t) s += (s.empty() ? "" : " ") + x;
    return s;
  };
  for (const UtteranceScore& u : r.per_utterance) {
    out << u.id << ',' << format_double(u.wer) << ',' << format_double(u.bleu_sentence) << ',' << format_double(u.cmi)
        << ',' << u.embedded_count << ',' << u.spans_total << ',' << u.spans_matched << ',' << (u.fallback ? 1 : 0)
        << ',' << join(u.hypothesis) << ',' << join(u.reference) << ',' << join(u.transcript) << ','
        << join(u.gold_transcript) << '\n';
  }
}

inline std::vector<UtteranceScore> read_per_utt_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kPerUttHeader) throw FormatError(path.string() + ":1: unexpected header");
  std::vector<UtteranceScore> rows;
  int lineno = 1;
  auto tokens = [](const std::string& s) {
    Tokens t;
    std::stringstream ss(s);
    std::string w;
    while (ss >> w) t.push_back(w);
    return t;
  };
  while (std::getline(in, line)) {
    ++lineno;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 12) throw FormatError(where + ": expected 12 fields, got " + std::to_string(f.size()));
    try {
      UtteranceScore u;
      u.id = f[0];
      u.wer = parse_double("wer", f[1]);
      u.bleu_sentence = parse_double("bleu_sentence", f[2]);
      u.cmi = parse_double("cmi", f[3]);
      u.embedded_count = static_cast<int>(parse_int("embedded_count", f[4]));
      u.spans_total = static_cast<std::size_t>(parse_int("spans_total", f[5]));
      u.spans_matched = static_cast<std::size_t>(parse_int("spans_matched", f[6]));
      u.fallback = parse_int("fallback", f[7]) != 0;
      u.hypothesis = tokens(f[8]);
      u.reference = tokens(f[9]);
      u.transcript = tokens(f[10]);
      u.gold_transcript = tokens(f[11]);
      rows.push_back(std::move(u));
    } catch (const InvalidArgument& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  return rows;
}

inline void write_report_csv(const std::filesystem::path& path, const MetricsReport& r) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "metric,value\n";
  out << "utterances," << r.utterances << '\n';
  out << "bleu," << format_double(r.bleu) << '\n';
  out << "wer," << format_double(r.wer) << '\n';
  out << "cmi," << format_double(r.cmi) << '\n';
  out << "cmi_percent," << format_double(100.0 * r.cmi) << '\n';
  out << "span_accuracy," << format_double(r.span_accuracy) << '\n';
  out << "spans_total," << r.spans_total << '\n';
  out << "flagged," << r.flagged << '\n';
  out << "r_squared," << (r.r_squared ? format_double(*r.r_squared) : "nan") << '\n';
  for (const BinScore& b : r.bins) {
    out << "bin_" << b.label << "_count," << b.count << '\n';
    out << "bin_" << b.label << "_bleu," << format_double(b.mean) << '\n';
  }
}

/// metric -> value text from a report.csv.
inline KeyValues read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  KeyValues kv;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError(path.string() + ": malformed line '" + line + "'");
    kv[line.substr(0, comma)] = line.substr(comma + 1);
  }
  return kv;
}

}  // namespace costa::metrics
