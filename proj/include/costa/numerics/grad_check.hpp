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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "costa/numerics/graph.hpp"

namespace costa {

/// Builds a scalar from bound inputs. Called once with a recording graph and
/// then repeatedly with non-recording graphs for the numeric side.
template <typename T>
using ScalarFn = std::function<Var<T>(Graph<T>&)>;

struct GradCheckOptions {
  double step = 1e-5;
  /// 0 checks every coordinate; otherwise a seeded sample per input.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
  /// Inputs to check; empty means every bound input.
  std::vector<std::string> names;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_input;
  std::size_t worst_index = 0;
  std::size_t coords_checked = 0;
};

namespace detail {

template <typename T>
T eval_scalar(const ScalarFn<T>& fn, const Bindings<T>& bindings) {
  Graph<T> g(&bindings, /*record=*/false);
  const T v = fn(g).value().item();
  if (!std::isfinite(static_cast<double>(v))) {
    throw InvalidArgument("grad_check: function value is not finite");
  }
  return v;
}

}  // namespace detail

/// Compares reverse-mode gradients with central differences. The error of a
/// coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|).
template <typename T>
GradCheckResult grad_check(const ScalarFn<T>& fn, Bindings<T> bindings,
                           const GradCheckOptions& options = {}) {
  if (!(options.step > 0)) throw InvalidArgument("grad_check: step must be positive");
  Gradients<T> analytic;
  {
    Graph<T> g(&bindings, /*record=*/true);
    Var<T> root = fn(g);
    if (!std::isfinite(static_cast<double>(root.value().item()))) {
      throw InvalidArgument("grad_check: function value is not finite");
    }
    analytic = g.backward(root);
  }
  std::vector<std::string> names = options.names;
  if (names.empty())
    for (const auto& [name, _] : bindings) names.push_back(name);

  std::mt19937_64 rng(options.seed);
  GradCheckResult result;
  const T h = static_cast<T>(options.step);
  for (const std::string& name : names) {
    auto it = bindings.find(name);
    if (it == bindings.end()) throw UnboundInputError("grad_check: unknown input '" + name + "'");
    Array<T>& x = it->second;
    auto git = analytic.find(name);
    std::vector<std::size_t> coords(x.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (options.max_coords_per_input > 0 && coords.size() > options.max_coords_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_input);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const T saved = x[i];
      x[i] = saved + h;
      const T up = detail::eval_scalar(fn, bindings);
      x[i] = saved - h;
      const T down = detail::eval_scalar(fn, bindings);
      x[i] = saved;
      const double numeric = (static_cast<double>(up) - static_cast<double>(down)) / (2.0 * options.step);
      const double exact = git == analytic.end() ? 0.0 : static_cast<double>(git->second[i]);
      const double err = std::abs(exact - numeric) /
                         std::max({1.0, std::abs(exact), std::abs(numeric)});
      ++result.coords_checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_input = name;
        result.worst_index = i;
      }
    }
  }
  return result;
}

/// Single-array form: `fn` receives the point bound under the name "x".
template <typename T>
double grad_check(const std::function<Var<T>(Graph<T>&, Var<T>)>& fn, const Array<T>& point,
                  double step) {
  Bindings<T> b{{"x", point}};
  GradCheckOptions opt;
  opt.step = step;
  return grad_check<T>([&fn](Graph<T>& g) { return fn(g, g.input("x")); }, std::move(b), opt)
      .max_rel_error;
}

}  // namespace costa
