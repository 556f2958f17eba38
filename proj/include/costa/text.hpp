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
#include <string>
#include <unordered_map>
#include <vector>

#include "costa/errors.hpp"

namespace costa {

/// Language of a source token: the dominant (matrix) language or the
/// inserted (embedded) one.
enum class Lang : std::uint8_t { kMatrix, kEmbedded };

inline char lang_code(Lang l) { return l == Lang::kMatrix ? 'M' : 'E'; }

struct TaggedToken {
  std::string text;
  Lang lang = Lang::kMatrix;

  friend bool operator==(const TaggedToken&, const TaggedToken&) = default;
};

using Tokens = std::vector<std::string>;
using TaggedTokens = std::vector<TaggedToken>;

inline Tokens strip_tags(const TaggedTokens& tagged) {
  Tokens out;
  out.reserve(tagged.size());
  for (const TaggedToken& t : tagged) out.push_back(t.text);
  return out;
}

/// Bidirectional token <-> id table.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens) {
    for (auto& t : tokens) add(std::move(t));
  }

  int add(std::string token) {
    if (auto it = index_.find(token); it != index_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    index_.emplace(token, id);
    tokens_.push_back(std::move(token));
    return id;
  }

  int id(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) throw InvalidArgument("unknown token '" + token + "'");
    return it->second;
  }

  bool contains(const std::string& token) const { return index_.count(token) > 0; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(const Tokens& tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(id(t));
    return ids;
  }

  Tokens decode(const std::vector<int>& ids) const {
    Tokens out;
    out.reserve(ids.size());
    for (int i : ids) out.push_back(token(i));
    return out;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace costa
