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

// CTC forced alignment of a transcript against frame posteriors, and
// Gaussian perturbation of the resulting span boundaries.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "costa/ctc.hpp"

namespace costa {

/// Token j covers frames (ends[j-1], ends[j]] in 1-based terms, with
/// ends[-1] = 0. A noisy alignment may repeat an end; that token then reuses
/// the single frame at its end index.
struct Alignment {
  std::vector<std::size_t> ends;

  std::size_t size() const { return ends.size(); }

  /// 0-based inclusive rows of token j's frames.
  RowSpan rows(std::size_t j) const {
    const std::size_t start = j == 0 ? 0 : ends[j - 1];
    if (ends[j] <= start) return {ends[j] - 1, ends[j] - 1};
    return {start, ends[j] - 1};
  }

  std::vector<RowSpan> all_rows() const {
    std::vector<RowSpan> out;
    out.reserve(ends.size());
    for (std::size_t j = 0; j < ends.size(); ++j) out.push_back(rows(j));
    return out;
  }

  /// Strictly increasing, non-empty spans, last end within `frames`.
  bool is_partition(std::size_t frames) const {
    std::size_t prev = 0;
    for (std::size_t e : ends) {
      if (e <= prev) return false;
      prev = e;
    }
    return !ends.empty() && prev <= frames;
  }

  /// Non-decreasing and within [1, frames].
  bool is_monotone(std::size_t frames) const {
    std::size_t prev = 1;
    for (std::size_t e : ends) {
      if (e < prev || e > frames) return false;
      prev = e;
    }
    return true;
  }

  std::string to_string() const {
    std::string s;
    for (std::size_t j = 0; j < ends.size(); ++j) s += (j ? "," : "") + std::to_string(ends[j]);
    return s;
  }

  static Alignment parse(const std::string& text) {
    Alignment a;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
      std::size_t used = 0;
      unsigned long v = 0;
      try {
        v = std::stoul(item, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != item.size() || v == 0)
        throw FormatError("alignment: bad end index '" + item + "' in '" + text + "'");
      a.ends.push_back(v);
    }
    return a;
  }

  friend bool operator==(const Alignment&, const Alignment&) = default;
};

struct AlignmentPath {
  Alignment alignment;
  /// Trellis state per frame: 2j is the blank after j labels, 2j-1 label j.
  std::vector<std::size_t> states;
  double log_score = 0.0;
};

namespace detail {

/// Alignment from a trellis state path: blanks stay with the preceding label,
/// leading blanks go to label 1, and the final label runs to the last frame.
inline Alignment spans_from_states(const std::vector<std::size_t>& states, std::size_t labels) {
  Alignment a;
  a.ends.assign(labels, states.size());
  std::size_t next = 2;
  for (std::size_t t = 0; t < states.size() && next <= labels; ++t) {
    if (states[t] == 2 * next - 1) {
      a.ends[next - 2] = t;
      ++next;
    }
  }
  return a;
}

}  // namespace detail

/// Viterbi path through the CTC trellis emitting exactly `transcript`.
/// Ties (within 1e-9) prefer staying on the current state, then the next
/// state, then the skip; at the start, the leading blank.
template <typename T>
AlignmentPath viterbi_align(const Array<T>& logits, const std::vector<int>& transcript) {
  if (transcript.empty()) throw InvalidArgument("forced_align: empty transcript");
  if (logits.rank() != 2) throw ShapeError("forced_align: logits must be a matrix, got " + shape_string(logits.shape()));
  const std::size_t frames = logits.rows(), classes = logits.cols();
  const int blank = static_cast<int>(classes) - 1;
  for (int l : transcript)
    if (l < 0 || l >= blank)
      throw InvalidArgument("forced_align: label " + std::to_string(l) + " outside [0, " + std::to_string(blank) + ")");
  ctc_require_feasible(frames, transcript);

  constexpr double ninf = -std::numeric_limits<double>::infinity();
  constexpr double tie = 1e-9;
  const std::vector<int> ext = ctc_extended(transcript, blank);
  const std::size_t states = ext.size();

  std::vector<double> logp(frames * classes);
  for (std::size_t t = 0; t < frames; ++t) {
    double mx = ninf;
    for (std::size_t k = 0; k < classes; ++k) mx = std::max(mx, static_cast<double>(logits(t, k)));
    double z = 0;
    for (std::size_t k = 0; k < classes; ++k) z += std::exp(static_cast<double>(logits(t, k)) - mx);
    const double lse = mx + std::log(z);
    for (std::size_t k = 0; k < classes; ++k) logp[t * classes + k] = static_cast<double>(logits(t, k)) - lse;
  }
  auto emit = [&](std::size_t t, std::size_t s) { return logp[t * classes + static_cast<std::size_t>(ext[s])]; };

  // best[t][s]: best score of frames t..T-1 given state s at frame t.
  std::vector<double> best(frames * states, ninf);
  auto at = [&](std::size_t t, std::size_t s) -> double& { return best[t * states + s]; };
  at(frames - 1, states - 1) = emit(frames - 1, states - 1);
  at(frames - 1, states - 2) = emit(frames - 1, states - 2);
  for (std::size_t t = frames - 1; t-- > 0;) {
    for (std::size_t s = 0; s < states; ++s) {
      double m = at(t + 1, s);
      if (s + 1 < states) m = std::max(m, at(t + 1, s + 1));
      if (s + 2 < states && ctc_can_skip(ext, s + 2, blank)) m = std::max(m, at(t + 1, s + 2));
      if (m != ninf) at(t, s) = m + emit(t, s);
    }
  }

  AlignmentPath path;
  std::size_t s = at(0, 1) > at(0, 0) + tie ? 1 : 0;
  path.log_score = at(0, s);
  path.states.push_back(s);
  for (std::size_t t = 1; t < frames; ++t) {
    std::size_t pick = s;
    double top = at(t, s);
    std::vector<std::size_t> options{s};
    if (s + 1 < states) options.push_back(s + 1);
    if (s + 2 < states && ctc_can_skip(ext, s + 2, blank)) options.push_back(s + 2);
    for (std::size_t o : options) top = std::max(top, at(t, o));
    for (std::size_t o : options) {
      if (at(t, o) != ninf && at(t, o) >= top - tie) {
        pick = o;
        break;
      }
    }
    s = pick;
    path.states.push_back(s);
  }
  path.alignment = detail::spans_from_states(path.states, transcript.size());
  return path;
}

template <typename T>
Alignment forced_align(const Array<T>& logits, const std::vector<int>& transcript) {
  return viterbi_align(logits, transcript).alignment;
}

struct NoiseConfig {
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

/// floor(end + offset), clamped to [1, frames], then made non-decreasing.
inline Alignment apply_alignment_offsets(const Alignment& a, std::size_t frames, const std::vector<double>& offsets) {
  if (offsets.size() != a.size()) throw InvalidArgument("alignment offsets: count does not match spans");
  if (frames == 0) throw InvalidArgument("alignment offsets: no frames");
  Alignment out;
  out.ends.reserve(a.size());
  std::size_t prev = 1;
  for (std::size_t j = 0; j < a.size(); ++j) {
    double e = std::floor(static_cast<double>(a.ends[j]) + offsets[j]);
    e = std::clamp(e, 1.0, static_cast<double>(frames));
    const std::size_t v = std::max(prev, static_cast<std::size_t>(e));
    out.ends.push_back(v);
    prev = v;
  }
  return out;
}

/// Perturbs every end index by an independent N(0, sigma) draw.
inline Alignment inject_alignment_noise(const Alignment& a, std::size_t frames, const NoiseConfig& noise) {
  if (!(noise.sigma >= 0.0)) throw InvalidArgument("alignment noise: sigma must be >= 0");
  if (noise.sigma == 0.0) return a;
  std::mt19937_64 rng(noise.seed);
  std::normal_distribution<double> draw(0.0, noise.sigma);
  std::vector<double> offsets(a.size());
  for (double& o : offsets) o = draw(rng);
  return apply_alignment_offsets(a, frames, offsets);
}

}  // namespace costa
