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

// Combining speech features with transcript token embeddings into the one
// sequence the translation encoder reads.

#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "costa/alignment.hpp"
#include "costa/layers.hpp"

namespace costa {

enum class FusionStrategy {
  kInterleaveSpeechFirst,
  kInterleaveTextFirst,
  kAppendSpeechFirst,
  kAppendTextFirst,
  kDirectInterleave,
  kProjectedConcat,
};

inline constexpr std::array<FusionStrategy, 6> kAllFusionStrategies{
    FusionStrategy::kInterleaveSpeechFirst, FusionStrategy::kInterleaveTextFirst, FusionStrategy::kAppendSpeechFirst,
    FusionStrategy::kAppendTextFirst,       FusionStrategy::kDirectInterleave,    FusionStrategy::kProjectedConcat};

inline std::string to_string(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::kInterleaveSpeechFirst: return "interleave-speech-first";
    case FusionStrategy::kInterleaveTextFirst: return "interleave-text-first";
    case FusionStrategy::kAppendSpeechFirst: return "append-speech-first";
    case FusionStrategy::kAppendTextFirst: return "append-text-first";
    case FusionStrategy::kDirectInterleave: return "direct-interleave";
    case FusionStrategy::kProjectedConcat: return "projected-concat";
  }
  return "?";
}

inline FusionStrategy parse_fusion_strategy(std::string_view name) {
  std::string valid;
  for (FusionStrategy s : kAllFusionStrategies) {
    if (to_string(s) == name) return s;
    valid += (valid.empty() ? "" : ", ") + to_string(s);
  }
  throw InvalidArgument("unknown fusion strategy '" + std::string(name) + "' (valid: " + valid + ")");
}

enum class Modality { kSpeech = 0, kText = 1 };

/// Origin of one fused position: the modality and the 1-based token index.
struct Provenance {
  Modality modality;
  std::size_t token;
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

inline std::string to_string(const Provenance& p) {
  return std::string(p.modality == Modality::kSpeech ? "SPEECH " : "TEXT ") + std::to_string(p.token);
}

template <typename T>
struct FusedSequence {
  Var<T> values;
  std::vector<Provenance> provenance;
};

/// Mean of the feature rows in `span`, as a 1 x d row.
template <typename T>
Var<T> mean_pool_span(Var<T> features, RowSpan span) {
  return mean_rows(features, span);
}

/// Parameters of the projected-concat block: self-attention over 2d-wide
/// inputs, then a feed-forward and a residual projection down to d.
template <typename T>
void init_fusion(ParamInit<T>& init, std::size_t d, std::size_t ff) {
  init.layer_norm("fusion.ln1", 2 * d);
  init.linear("fusion.q", 2 * d, 2 * d);
  init.linear("fusion.k", 2 * d, 2 * d);
  init.linear("fusion.v", 2 * d, 2 * d);
  init.linear("fusion.o", 2 * d, 2 * d);
  init.layer_norm("fusion.ln2", 2 * d);
  init.linear("fusion.ff1", 2 * d, ff);
  init.linear("fusion.ff2", ff, d);
  init.linear("fusion.out", 2 * d, d);
}

template <typename T>
Var<T> project_concat(Graph<T>& g, Var<T> x, double dropout_rate) {
  const T p = static_cast<T>(dropout_rate);
  Var<T> h = add(x, dropout(self_attention(g, norm(g, x, "fusion.ln1"), "fusion", 1, false), p));
  return add(linear(g, h, "fusion.out"), dropout(feed_forward(g, norm(g, h, "fusion.ln2"), "fusion"), p));
}

/// features: T' x d speech features; tokens: M x d transcript embeddings.
template <typename T>
FusedSequence<T> fuse(Graph<T>& g, Var<T> features, Var<T> tokens, const Alignment& alignment,
                      FusionStrategy strategy, double dropout_rate = 0.0) {
  const std::size_t m = tokens.rows();
  if (alignment.size() != m)
    throw InvalidArgument("fuse: alignment has " + std::to_string(alignment.size()) + " spans for " +
                          std::to_string(m) + " tokens");
  if (features.cols() != tokens.cols())
    throw ShapeError("fuse: feature width " + std::to_string(features.cols()) + " vs token width " +
                     std::to_string(tokens.cols()));
  if (m == 0) throw InvalidArgument("fuse: empty transcript");
  if (alignment.ends.back() > features.rows())
    throw InvalidArgument("fuse: alignment ends at frame " + std::to_string(alignment.ends.back()) + " of " +
                          std::to_string(features.rows()));

  const std::vector<RowSpan> spans = alignment.all_rows();
  FusedSequence<T> out;

  if (strategy == FusionStrategy::kDirectInterleave) {
    std::vector<std::size_t> idx;  // into [features; tokens]
    const std::size_t frames = features.rows();
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t r = spans[j].first; r <= spans[j].last; ++r) {
        idx.push_back(r);
        out.provenance.push_back({Modality::kSpeech, j + 1});
      }
      idx.push_back(frames + j);
      out.provenance.push_back({Modality::kText, j + 1});
    }
    out.values = gather_rows(concat_rows<T>({features, tokens}), idx);
    return out;
  }

  Var<T> pooled = segment_mean(features, spans);
  if (strategy == FusionStrategy::kProjectedConcat) {
    out.values = project_concat(g, concat_cols(pooled, tokens), dropout_rate);
    for (std::size_t j = 0; j < m; ++j) out.provenance.push_back({Modality::kSpeech, j + 1});
    return out;
  }

  // Rows 0..M-1 are pooled speech, M..2M-1 are tokens.
  std::vector<std::size_t> idx;
  auto speech = [&](std::size_t j) {
    idx.push_back(j);
    out.provenance.push_back({Modality::kSpeech, j + 1});
  };
  auto text = [&](std::size_t j) {
    idx.push_back(m + j);
    out.provenance.push_back({Modality::kText, j + 1});
  };
  switch (strategy) {
    case FusionStrategy::kInterleaveSpeechFirst:
      for (std::size_t j = 0; j < m; ++j) speech(j), text(j);
      break;
    case FusionStrategy::kInterleaveTextFirst:
      for (std::size_t j = 0; j < m; ++j) text(j), speech(j);
      break;
    case FusionStrategy::kAppendSpeechFirst:
      for (std::size_t j = 0; j < m; ++j) speech(j);
      for (std::size_t j = 0; j < m; ++j) text(j);
      break;
    case FusionStrategy::kAppendTextFirst:
      for (std::size_t j = 0; j < m; ++j) text(j);
      for (std::size_t j = 0; j < m; ++j) speech(j);
      break;
    default:
      break;
  }
  out.values = gather_rows(concat_rows<T>({pooled, tokens}), idx);
  return out;
}

}  // namespace costa
