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

// Small corpora and models shared by the model-level tests.

#pragma once

#include <vector>

#include "costa/corpus.hpp"
#include "costa/translator.hpp"

namespace costa::fixture {

inline corpus::CorpusConfig tiny_corpus(std::size_t n, std::uint64_t seed) {
  corpus::CorpusConfig c;
  c.matrix_vocab_size = 5;
  c.embedded_vocab_size = 3;
  c.utterance_length = {2, 4};
  c.frames_per_token = {8, 10};
  c.feature_dim = 4;
  c.size = n;
  c.seed = seed;
  return c;
}

inline ModelConfig tiny_model_config(FusionStrategy fusion = FusionStrategy::kInterleaveSpeechFirst) {
  ModelConfig m;
  m.acoustic.feature_dim = 4;
  m.acoustic.model_dim = 8;
  m.acoustic.heads = 2;
  m.acoustic.ff_dim = 12;
  m.acoustic.encoder_blocks = 1;
  m.translator.encoder_blocks = 1;
  m.translator.decoder_blocks = 1;
  m.translator.heads = 2;
  m.translator.ff_dim = 12;
  m.fusion = fusion;
  return m;
}

template <typename T>
Model<T> tiny_model(const corpus::CorpusManifest& data, std::uint64_t seed,
                    FusionStrategy fusion = FusionStrategy::kInterleaveSpeechFirst) {
  return make_model<T>(tiny_model_config(fusion), corpus::source_vocabulary(data.config),
                       corpus::target_vocabulary(data.config), seed);
}

template <typename T>
std::vector<Example> examples(const corpus::CorpusManifest& data, const Model<T>& m) {
  std::vector<Example> out;
  for (const auto& u : data.records)
    out.push_back({u.id, &u.frames, m.source.encode(strip_tags(u.source)), m.target.encode(u.target)});
  return out;
}

}  // namespace costa::fixture
