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

// Evaluation quantities: word error rate, corpus BLEU, code-mixing index,
// order-dependent code-switched span accuracy, and binned least-squares R².

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "costa/errors.hpp"
#include "costa/text.hpp"

namespace costa::metrics {

/// Levenshtein distance with unit substitution, insertion and deletion costs.
inline std::size_t edit_distance(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline double wer(const Tokens& hypothesis, const Tokens& reference) {
  if (reference.empty()) throw InvalidArgument("wer: empty reference");
  return static_cast<double>(edit_distance(hypothesis, reference)) /
         static_cast<double>(reference.size());
}

/// Sufficient statistics of BLEU-4; additive over sentences.
struct BleuStats {
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;

  BleuStats& operator+=(const BleuStats& o) {
    for (int n = 0; n < 4; ++n) {
      matches[n] += o.matches[n];
      totals[n] += o.totals[n];
    }
    hyp_length += o.hyp_length;
    ref_length += o.ref_length;
    return *this;
  }
};

namespace detail {

inline std::map<std::string, std::size_t> ngram_counts(const Tokens& toks, std::size_t n) {
  std::map<std::string, std::size_t> counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    std::string key;
    for (std::size_t k = 0; k < n; ++k) {
      key += toks[i + k];
      key += '\x1f';
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace detail

inline BleuStats bleu_stats(const Tokens& hypothesis, const Tokens& reference) {
  BleuStats s;
  s.hyp_length = hypothesis.size();
  s.ref_length = reference.size();
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto h = detail::ngram_counts(hypothesis, n);
    const auto r = detail::ngram_counts(reference, n);
    for (const auto& [gram, count] : h) {
      s.totals[n - 1] += count;
      if (auto it = r.find(gram); it != r.end()) s.matches[n - 1] += std::min(count, it->second);
    }
  }
  return s;
}

/// BLEU-4 on a 0..100 scale. Unigram precision is unsmoothed; orders 2..4
/// use add-one smoothing (m + 1) / (t + 1). Brevity penalty exp(1 - r/c)
/// applies when the hypothesis side is shorter.
inline double bleu_from_stats(const BleuStats& s) {
  if (s.hyp_length == 0 || s.totals[0] == 0 || s.matches[0] == 0) return 0.0;
  double log_sum = std::log(static_cast<double>(s.matches[0]) / static_cast<double>(s.totals[0]));
  for (int n = 1; n < 4; ++n) {
    log_sum += std::log((static_cast<double>(s.matches[n]) + 1.0) /
                        (static_cast<double>(s.totals[n]) + 1.0));
  }
  const double c = static_cast<double>(s.hyp_length);
  const double r = static_cast<double>(s.ref_length);
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return 100.0 * bp * std::exp(log_sum / 4.0);
}

inline double bleu(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references) {
  if (hypotheses.size() != references.size()) {
    throw InvalidArgument("bleu: " + std::to_string(hypotheses.size()) + " hypotheses for " +
                          std::to_string(references.size()) + " references");
  }
  if (hypotheses.empty()) throw InvalidArgument("bleu: empty corpus");
  BleuStats total;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) total += bleu_stats(hypotheses[i], references[i]);
  return bleu_from_stats(total);
}

inline double sentence_bleu(const Tokens& hypothesis, const Tokens& reference) {
  return bleu_from_stats(bleu_stats(hypothesis, reference));
}

/// Per-utterance code-mixing index, (N - max language count) / N.
inline double compute_cmi(const TaggedTokens& tokens) {
  if (tokens.empty()) throw InvalidArgument("compute_cmi: empty token list");
  std::size_t embedded = 0;
  for (const auto& t : tokens) embedded += t.lang == Lang::kEmbedded ? 1 : 0;
  const std::size_t n = tokens.size();
  const std::size_t dominant = std::max(embedded, n - embedded);
  return static_cast<double>(n - dominant) / static_cast<double>(n);
}

/// Corpus CMI: mean of the per-utterance values.
inline double corpus_cmi(const std::vector<TaggedTokens>& utterances) {
  if (utterances.empty()) return 0.0;
  double total = 0.0;
  for (const auto& u : utterances) total += compute_cmi(u);
  return total / static_cast<double>(utterances.size());
}

using Span = Tokens;

/// Maximal runs of embedded-language tokens, in utterance order.
inline std::vector<Span> embedded_spans(const TaggedTokens& transcript) {
  std::vector<Span> spans;
  bool in_run = false;
  for (const auto& t : transcript) {
    if (t.lang == Lang::kEmbedded) {
      if (!in_run) spans.emplace_back();
      spans.back().push_back(t.text);
      in_run = true;
    } else {
      in_run = false;
    }
  }
  return spans;
}

/// Embedded spans of the transcript that occur in the reference translation.
/// Occurrences are claimed greedily left to right, so a repeated span needs a
/// fresh occurrence after the previous claim.
inline std::vector<Span> reference_spans(const TaggedTokens& transcript, const Tokens& reference) {
  std::vector<Span> confirmed;
  std::size_t cursor = 0;
  for (const Span& span : embedded_spans(transcript)) {
    auto it = std::search(reference.begin() + static_cast<std::ptrdiff_t>(cursor), reference.end(),
                          span.begin(), span.end());
    if (it == reference.end()) continue;
    confirmed.push_back(span);
    cursor = static_cast<std::size_t>(it - reference.begin()) + span.size();
  }
  return confirmed;
}

/// Maximal runs of tokens accepted by `is_embedded`.
inline std::vector<Span> candidate_spans(const Tokens& prediction,
                                         const std::function<bool(const std::string&)>& is_embedded) {
  std::vector<Span> spans;
  bool in_run = false;
  for (const auto& t : prediction) {
    if (is_embedded(t)) {
      if (!in_run) spans.emplace_back();
      spans.back().push_back(t);
      in_run = true;
    } else {
      in_run = false;
    }
  }
  return spans;
}

/// Length of the longest common subsequence of two span sequences, spans
/// compared by exact token equality.
inline std::size_t span_lcs(const std::vector<Span>& a, const std::vector<Span>& b) {
  std::vector<std::vector<std::size_t>> dp(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
  for (std::size_t i = 1; i <= a.size(); ++i)
    for (std::size_t j = 1; j <= b.size(); ++j)
      dp[i][j] = a[i - 1] == b[j - 1] ? dp[i - 1][j - 1] + 1 : std::max(dp[i - 1][j], dp[i][j - 1]);
  return dp[a.size()][b.size()];
}

struct SpanScore {
  std::size_t total = 0;
  std::size_t matched = 0;
  /// 100 * matched / total; meaningless when total == 0.
  double percent() const {
    return total == 0 ? 0.0 : 100.0 * static_cast<double>(matched) / static_cast<double>(total);
  }
};

inline SpanScore span_accuracy(const TaggedTokens& transcript, const Tokens& reference,
                               const Tokens& prediction,
                               const std::function<bool(const std::string&)>& is_embedded) {
  const std::vector<Span> ref = reference_spans(transcript, reference);
  SpanScore s;
  s.total = ref.size();
  if (s.total == 0) return s;
  s.matched = span_lcs(ref, candidate_spans(prediction, is_embedded));
  return s;
}

/// Aggregate over utterances; utterances without reference spans do not count.
inline double aggregate_span_accuracy(const std::vector<SpanScore>& scores) {
  std::size_t total = 0, matched = 0;
  for (const auto& s : scores) {
    total += s.total;
    matched += s.matched;
  }
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(matched) / static_cast<double>(total);
}

/// Inclusive range of embedded-word counts.
struct Bin {
  int lo = 0;
  int hi = 0;
  std::string label() const { return lo == hi ? std::to_string(lo) : std::to_string(lo) + "-" + std::to_string(hi); }
};

inline std::vector<Bin> default_bins() { return {{3, 3}, {5, 5}, {7, 7}, {10, 10}}; }

struct BinScore {
  std::string label;
  std::size_t count = 0;
  double mean = 0.0;
};

struct Correlation {
  std::vector<BinScore> bins;
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

/// Ordinary least squares of score on count over the utterances that fall in
/// a bin. Constant scores give slope 0 and R² = 0.
inline Correlation bin_and_correlate(const std::vector<int>& counts, const std::vector<double>& scores,
                                     const std::vector<Bin>& bins) {
  if (counts.size() != scores.size()) throw InvalidArgument("bin_and_correlate: length mismatch");
  Correlation out;
  std::vector<double> xs, ys;
  for (const Bin& b : bins) {
    BinScore bs{b.label(), 0, 0.0};
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (counts[i] < b.lo || counts[i] > b.hi) continue;
      ++bs.count;
      bs.mean += scores[i];
      xs.push_back(counts[i]);
      ys.push_back(scores[i]);
    }
    if (bs.count) bs.mean /= static_cast<double>(bs.count);
    out.bins.push_back(bs);
  }
  if (xs.empty() || std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs.front(); })) {
    throw InvalidArgument("bin_and_correlate: need at least two distinct counts for a fit");
  }
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  out.slope = sxy / sxx;
  out.intercept = my - out.slope * mx;
  if (syy == 0.0) {
    out.slope = 0.0;
    out.intercept = my;
    out.r_squared = 0.0;
    return out;
  }
  double ss_res = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double r = ys[i] - (out.slope * xs[i] + out.intercept);
    ss_res += r * r;
  }
  out.r_squared = std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
  return out;
}

}  // namespace costa::metrics
