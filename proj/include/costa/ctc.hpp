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

// Connectionist temporal classification: the negative log-likelihood of a
// label sequence under per-frame posteriors, summed over every
// blank-augmented path (forward-backward in log space), and greedy decoding.
//
// The blank symbol is the last column of the logit matrix.

#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "costa/numerics.hpp"

namespace costa {

/// Frames needed to emit `labels`: one per label plus a separating blank
/// between each pair of equal neighbours.
inline std::size_t ctc_min_frames(const std::vector<int>& labels) {
  std::size_t need = labels.size();
  for (std::size_t i = 1; i < labels.size(); ++i) need += labels[i] == labels[i - 1] ? 1 : 0;
  return need;
}

inline void ctc_require_feasible(std::size_t frames, const std::vector<int>& labels) {
  const std::size_t need = ctc_min_frames(labels);
  if (frames < need) {
    throw InfeasibleError("CTC infeasible: " + std::to_string(labels.size()) + " labels need " +
                          std::to_string(need) + " frames, have " + std::to_string(frames));
  }
}

/// Blank-augmented label sequence: blank, l1, blank, l2, ..., lM, blank.
inline std::vector<int> ctc_extended(const std::vector<int>& labels, int blank) {
  std::vector<int> ext;
  ext.reserve(2 * labels.size() + 1);
  ext.push_back(blank);
  for (int l : labels) {
    ext.push_back(l);
    ext.push_back(blank);
  }
  return ext;
}

/// True when the trellis may jump from state s-2 straight to s.
inline bool ctc_can_skip(const std::vector<int>& ext, std::size_t s, int blank) {
  return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
}

namespace detail {

template <typename T>
T log_add(T a, T b) {
  constexpr T ninf = -std::numeric_limits<T>::infinity();
  if (a == ninf) return b;
  if (b == ninf) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

}  // namespace detail

/// -log P(labels | logits), with logits of shape T x (V + 1) and blank = V.
/// Throws InfeasibleError when T is too short for the labels.
template <typename T>
Var<T> ctc_loss(Var<T> logits, const std::vector<int>& labels) {
  const Array<T>& lv = logits.value();
  if (lv.rank() != 2) throw ShapeError("ctc_loss: logits must be a matrix, got " + shape_string(lv.shape()));
  const std::size_t frames = lv.rows(), classes = lv.cols();
  const int blank = static_cast<int>(classes) - 1;
  for (int l : labels)
    if (l < 0 || l >= blank)
      throw InvalidArgument("ctc_loss: label " + std::to_string(l) + " outside [0, " + std::to_string(blank) + ")");
  ctc_require_feasible(frames, labels);

  constexpr T ninf = -std::numeric_limits<T>::infinity();
  const std::vector<int> ext = ctc_extended(labels, blank);
  const std::size_t states = ext.size();

  auto logp = std::make_shared<Array<T>>(Array<T>::matrix(frames, classes));
  for (std::size_t t = 0; t < frames; ++t) {
    const T lse = detail::logsumexp_row(lv.data() + t * classes, classes);
    for (std::size_t k = 0; k < classes; ++k) (*logp)(t, k) = lv(t, k) - lse;
  }

  auto alpha = std::make_shared<Array<T>>(Array<T>::matrix(frames, states, ninf));
  (*alpha)(0, 0) = (*logp)(0, ext[0]);
  if (states > 1) (*alpha)(0, 1) = (*logp)(0, ext[1]);
  for (std::size_t t = 1; t < frames; ++t) {
    for (std::size_t s = 0; s < states; ++s) {
      T a = (*alpha)(t - 1, s);
      if (s >= 1) a = detail::log_add(a, (*alpha)(t - 1, s - 1));
      if (ctc_can_skip(ext, s, blank)) a = detail::log_add(a, (*alpha)(t - 1, s - 2));
      (*alpha)(t, s) = a == ninf ? ninf : a + (*logp)(t, ext[s]);
    }
  }
  T log_like = (*alpha)(frames - 1, states - 1);
  if (states > 1) log_like = detail::log_add(log_like, (*alpha)(frames - 1, states - 2));

  return logits.graph->emit(
      Array<T>::scalar(-log_like), {logits},
      [logits, ext, logp, alpha, log_like, frames, classes, states, blank](Graph<T>& g, const Array<T>& dy) {
        constexpr T ninf = -std::numeric_limits<T>::infinity();
        // beta(t, s): log-probability of finishing from state s after frame t
        // (emission at t excluded), so alpha * beta / P is the state posterior.
        Array<T> beta = Array<T>::matrix(frames, states, ninf);
        beta(frames - 1, states - 1) = T{0};
        if (states > 1) beta(frames - 1, states - 2) = T{0};
        for (std::size_t t = frames - 1; t-- > 0;) {
          for (std::size_t s = 0; s < states; ++s) {
            T b = beta(t + 1, s) + (*logp)(t + 1, ext[s]);
            if (s + 1 < states) b = detail::log_add(b, beta(t + 1, s + 1) + (*logp)(t + 1, ext[s + 1]));
            if (s + 2 < states && ctc_can_skip(ext, s + 2, blank))
              b = detail::log_add(b, beta(t + 1, s + 2) + (*logp)(t + 1, ext[s + 2]));
            beta(t, s) = b;
          }
        }
        Array<T>& gl = g.grad(logits);
        std::vector<T> occupancy(classes);
        for (std::size_t t = 0; t < frames; ++t) {
          std::fill(occupancy.begin(), occupancy.end(), T{0});
          for (std::size_t s = 0; s < states; ++s) {
            const T a = (*alpha)(t, s), b = beta(t, s);
            if (a == ninf || b == ninf) continue;
            occupancy[static_cast<std::size_t>(ext[s])] += std::exp(a + b - log_like);
          }
          for (std::size_t k = 0; k < classes; ++k)
            gl(t, k) += dy[0] * (std::exp((*logp)(t, k)) - occupancy[k]);
        }
      });
}

/// Per-frame argmax (lowest index wins ties), repeats collapsed, blanks
/// removed. `logits` is T x (V + 1) with blank = V.
template <typename T>
std::vector<int> ctc_greedy_decode(const Array<T>& logits) {
  const std::size_t classes = logits.cols();
  const int blank = static_cast<int>(classes) - 1;
  std::vector<int> out;
  int prev = -1;
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    int best = 0;
    for (std::size_t k = 1; k < classes; ++k)
      if (logits(t, k) > logits(t, static_cast<std::size_t>(best))) best = static_cast<int>(k);
    if (best != blank && best != prev) out.push_back(best);
    prev = best;
  }
  return out;
}

}  // namespace costa
