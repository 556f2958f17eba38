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

// Parameter initialisation and the transformer building blocks shared by the
// acoustic encoder, the fusion projection and the translator. Parameters live
// in a name -> Array map and are pulled into a Graph by name.

#pragma once

#include <cmath>
#include <random>
#include <string>

#include "costa/numerics.hpp"

namespace costa {

template <typename T>
using Parameters = Bindings<T>;

/// Seeded parameter factory.
template <typename T>
class ParamInit {
 public:
  ParamInit(Parameters<T>& params, std::uint64_t seed) : params_(params), rng_(seed) {}

  void linear(const std::string& name, std::size_t in, std::size_t out) {
    params_[name + ".w"] = random_normal<T>({in, out}, rng_, 1.0 / std::sqrt(static_cast<double>(in)));
    params_[name + ".b"] = Array<T>({1, out}, T{0});
  }

  void layer_norm(const std::string& name, std::size_t d) {
    params_[name + ".g"] = Array<T>({1, d}, T{1});
    params_[name + ".b"] = Array<T>({1, d}, T{0});
  }

  void table(const std::string& name, std::size_t rows, std::size_t d, double stddev) {
    params_[name] = random_normal<T>({rows, d}, rng_, stddev);
  }

  /// Pre-norm self-attention + feed-forward block.
  void encoder_block(const std::string& name, std::size_t d, std::size_t ff) {
    layer_norm(name + ".ln1", d);
    linear(name + ".q", d, d);
    linear(name + ".k", d, d);
    linear(name + ".v", d, d);
    linear(name + ".o", d, d);
    layer_norm(name + ".ln2", d);
    linear(name + ".ff1", d, ff);
    linear(name + ".ff2", ff, d);
  }

  /// Encoder block plus cross-attention over a memory sequence.
  void decoder_block(const std::string& name, std::size_t d, std::size_t ff) {
    encoder_block(name, d, ff);
    layer_norm(name + ".lnx", d);
    linear(name + ".xq", d, d);
    linear(name + ".xk", d, d);
    linear(name + ".xv", d, d);
    linear(name + ".xo", d, d);
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  Parameters<T>& params_;
  std::mt19937_64 rng_;
};

struct BlockShape {
  std::size_t heads = 4;
  double dropout = 0.0;
};

template <typename T>
Var<T> linear(Graph<T>& g, Var<T> x, const std::string& name) {
  return add_row(matmul(x, g.input(name + ".w")), g.input(name + ".b"));
}

template <typename T>
Var<T> norm(Graph<T>& g, Var<T> x, const std::string& name) {
  return layer_norm(x, g.input(name + ".g"), g.input(name + ".b"));
}

template <typename T>
Var<T> self_attention(Graph<T>& g, Var<T> h, const std::string& name, std::size_t heads, bool causal) {
  Var<T> a = attention(linear(g, h, name + ".q"), linear(g, h, name + ".k"), linear(g, h, name + ".v"), heads, causal);
  return linear(g, a, name + ".o");
}

template <typename T>
Var<T> feed_forward(Graph<T>& g, Var<T> h, const std::string& name) {
  return linear(g, relu(linear(g, h, name + ".ff1")), name + ".ff2");
}

template <typename T>
Var<T> encoder_block(Graph<T>& g, Var<T> x, const std::string& name, const BlockShape& s) {
  const T p = static_cast<T>(s.dropout);
  x = add(x, dropout(self_attention(g, norm(g, x, name + ".ln1"), name, s.heads, false), p));
  return add(x, dropout(feed_forward(g, norm(g, x, name + ".ln2"), name), p));
}

template <typename T>
Var<T> decoder_block(Graph<T>& g, Var<T> y, Var<T> memory, const std::string& name, const BlockShape& s) {
  const T p = static_cast<T>(s.dropout);
  y = add(y, dropout(self_attention(g, norm(g, y, name + ".ln1"), name, s.heads, true), p));
  Var<T> h = norm(g, y, name + ".lnx");
  Var<T> c = attention(linear(g, h, name + ".xq"), linear(g, memory, name + ".xk"), linear(g, memory, name + ".xv"),
                       s.heads, false);
  y = add(y, dropout(linear(g, c, name + ".xo"), p));
  return add(y, dropout(feed_forward(g, norm(g, y, name + ".ln2"), name), p));
}

/// Sinusoidal position table; row i encodes position i + 1.
template <typename T>
Array<T> sinusoid_positions(std::size_t length, std::size_t d) {
  Array<T> pe = Array<T>::matrix(length, d);
  for (std::size_t i = 0; i < length; ++i) {
    const double pos = static_cast<double>(i + 1);
    for (std::size_t k = 0; k < d; ++k) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (k / 2)) / static_cast<double>(d));
      pe(i, k) = static_cast<T>(k % 2 == 0 ? std::sin(pos * rate) : std::cos(pos * rate));
    }
  }
  return pe;
}

template <typename T>
Var<T> add_positions(Graph<T>& g, Var<T> x) {
  return add(x, g.constant(sinusoid_positions<T>(x.rows(), x.cols())));
}

}  // namespace costa
