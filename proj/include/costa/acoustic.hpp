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

// Speech branch: input projection, strided convolutional downsampling, a
// transformer encoder, and a CTC head over the source vocabulary + blank.

#pragma once

#include <string>
#include <vector>

#include "costa/ctc.hpp"
#include "costa/layers.hpp"

namespace costa {

struct ConvSpec {
  std::size_t kernel = 2;
  std::size_t stride = 2;
  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

struct AcousticConfig {
  std::size_t feature_dim = 16;
  std::size_t model_dim = 64;
  std::vector<ConvSpec> conv{{2, 2}, {2, 2}};
  std::size_t encoder_blocks = 2;
  std::size_t heads = 4;
  std::size_t ff_dim = 128;
  /// Source vocabulary size, without blank. Blank is column `vocab_size`.
  std::size_t vocab_size = 60;
  double dropout = 0.0;

  /// Two stride-4 layers (overall factor 16).
  static std::vector<ConvSpec> stride4_preset() { return {{4, 4}, {4, 4}}; }

  int blank() const { return static_cast<int>(vocab_size); }

  void validate() const {
    for (const ConvSpec& c : conv)
      if (c.kernel < 1 || c.stride < 1) throw InvalidArgument("conv kernel and stride must be >= 1");
    if (model_dim == 0 || feature_dim == 0 || vocab_size == 0) throw InvalidArgument("acoustic dims must be positive");
    if (model_dim % heads != 0) throw InvalidArgument("attention heads must divide model_dim");
  }

  /// Frame count after the conv stack; 0 when the input is too short.
  std::size_t downsampled_length(std::size_t frames) const {
    std::size_t len = frames;
    for (const ConvSpec& c : conv) len = conv_output_length(len, c.kernel, c.stride);
    return len;
  }

  /// Shortest input that yields at least one output frame.
  std::size_t min_frames() const {
    std::size_t need = 1;
    for (auto it = conv.rbegin(); it != conv.rend(); ++it) need = (need - 1) * it->stride + it->kernel;
    return need;
  }

  std::size_t downsampling_factor() const {
    std::size_t f = 1;
    for (const ConvSpec& c : conv) f *= c.stride;
    return f;
  }
};

template <typename T>
void init_acoustic(ParamInit<T>& init, const AcousticConfig& c) {
  c.validate();
  init.linear("acoustic.in", c.feature_dim, c.model_dim);
  for (std::size_t i = 0; i < c.conv.size(); ++i)
    init.linear("acoustic.conv" + std::to_string(i), c.conv[i].kernel * c.model_dim, c.model_dim);
  for (std::size_t i = 0; i < c.encoder_blocks; ++i)
    init.encoder_block("acoustic.block" + std::to_string(i), c.model_dim, c.ff_dim);
  if (c.encoder_blocks > 0) init.layer_norm("acoustic.ln_f", c.model_dim);
  init.linear("acoustic.ctc", c.model_dim, c.vocab_size + 1);
}

/// frames (T x feature_dim) -> speech features (T' x model_dim).
template <typename T>
Var<T> encode_speech(Graph<T>& g, Var<T> frames, const AcousticConfig& c) {
  if (frames.value().rank() != 2 || frames.cols() != c.feature_dim)
    throw ShapeError("encode_speech: frames " + shape_string(frames.shape()) + " do not have " +
                     std::to_string(c.feature_dim) + " features");
  if (frames.rows() < c.min_frames())
    throw InvalidArgument("encode_speech: " + std::to_string(frames.rows()) + " frames, the conv stack needs at least " +
                          std::to_string(c.min_frames()));
  Var<T> x = linear(g, frames, "acoustic.in");
  for (std::size_t i = 0; i < c.conv.size(); ++i) {
    const std::string name = "acoustic.conv" + std::to_string(i);
    x = conv1d(x, g.input(name + ".w"), g.input(name + ".b"), c.conv[i].kernel, c.conv[i].stride);
  }
  if (c.encoder_blocks == 0) return x;
  x = dropout(add_positions(g, x), static_cast<T>(c.dropout));
  const BlockShape shape{c.heads, c.dropout};
  for (std::size_t i = 0; i < c.encoder_blocks; ++i) x = encoder_block(g, x, "acoustic.block" + std::to_string(i), shape);
  return norm(g, x, "acoustic.ln_f");
}

/// Unnormalised CTC scores, T' x (vocab + 1), blank last.
template <typename T>
Var<T> ctc_logits(Graph<T>& g, Var<T> features) {
  return linear(g, features, "acoustic.ctc");
}

}  // namespace costa
