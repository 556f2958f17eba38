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

#include <cstdint>
#include <random>
#include <string_view>

#include "costa/numerics/array.hpp"

namespace costa {

/// splitmix64 finaliser; used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// FNV-1a, 64 bit.
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
Array<T> random_normal(Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
  Array<T> a(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (T& x : a.values()) x = static_cast<T>(dist(rng));
  return a;
}

template <typename T>
Array<T> random_uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  Array<T> a(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (T& x : a.values()) x = static_cast<T>(dist(rng));
  return a;
}

}  // namespace costa
