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
#include <deque>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "costa/errors.hpp"
#include "costa/numerics/array.hpp"

namespace costa {

template <typename T>
using Bindings = std::map<std::string, Array<T>>;

template <typename T>
using Gradients = std::map<std::string, Array<T>>;

template <typename T>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while the graph
/// that created it is alive.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Array<T>& value() const { return graph->value(*this); }
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Define-by-run reverse-mode tape.
///
/// Every operation evaluates eagerly and appends a node. Nodes are stored in
/// creation order, which is a topological order, so backward() is a single
/// reverse sweep. Named inputs are resolved against a Bindings map supplied at
/// construction; backward() returns one gradient per named input.
template <typename T>
class Graph {
 public:
  /// Accumulates into the gradients of the inputs, given the output gradient.
  using BackwardFn = std::function<void(Graph&, const Array<T>& out_grad)>;

  explicit Graph(const Bindings<T>* bindings = nullptr, bool record = true)
      : bindings_(bindings), record_(record) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Differentiable leaf looked up by name. Repeated calls with the same name
  /// return the same node.
  Var<T> input(const std::string& name) {
    if (auto it = named_.find(name); it != named_.end()) return {this, it->second};
    if (bindings_ == nullptr) throw UnboundInputError("unbound input '" + name + "'");
    auto it = bindings_->find(name);
    if (it == bindings_->end()) throw UnboundInputError("unbound input '" + name + "'");
    Node node;
    node.ref = &it->second;
    node.requires_grad = record_;
    node.name = name;
    nodes_.push_back(std::move(node));
    named_.emplace(name, nodes_.size() - 1);
    return {this, nodes_.size() - 1};
  }

  /// Leaf that never receives a gradient.
  Var<T> constant(Array<T> value) {
    Node node;
    node.own = std::move(value);
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
  }

  /// Appends an operation result. `backward` is kept only when recording and
  /// at least one input requires a gradient.
  Var<T> emit(Array<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
    return emit(std::move(value), std::vector<Var<T>>(inputs), std::move(backward));
  }

  Var<T> emit(Array<T> value, const std::vector<Var<T>>& inputs, BackwardFn backward) {
    Node node;
    node.own = std::move(value);
    if (record_) {
      for (const Var<T>& in : inputs) {
        if (nodes_[in.id].requires_grad) node.requires_grad = true;
      }
      if (node.requires_grad) node.backward = std::move(backward);
    }
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
  }

  const Array<T>& value(Var<T> v) const {
    const Node& n = nodes_[v.id];
    return n.ref ? *n.ref : n.own;
  }

  bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }

  /// Gradient buffer of a node, zero-initialised on first access. Only valid
  /// during backward().
  Array<T>& grad(Var<T> v) {
    Node& n = nodes_[v.id];
    if (n.grad.empty()) n.grad = Array<T>(value(v).shape(), T{0});
    return n.grad;
  }

  /// Reverse sweep from a scalar root. Returns gradients for every input that
  /// was requested by name (zero when the root does not depend on it).
  Gradients<T> backward(Var<T> root) {
    if (value(root).size() != 1) {
      throw ShapeError("backward requires a scalar root, got shape " +
                       shape_string(value(root).shape()));
    }
    if (!record_) throw Error("backward called on a graph built without recording");
    for (Node& n : nodes_) n.grad = Array<T>();
    grad(root)[0] = T{1};
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.grad);
    }
    Gradients<T> out;
    for (const auto& [name, id] : named_) {
      Node& n = nodes_[id];
      out.emplace(name, n.grad.empty() ? Array<T>(value({this, id}).shape(), T{0})
                                       : n.grad);
    }
    return out;
  }

  bool training() const { return training_; }
  void set_training(bool on) { training_ = on; }
  bool recording() const { return record_; }

  std::mt19937_64& rng() { return rng_; }
  void seed(std::uint64_t s) { rng_.seed(s); }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    const Array<T>* ref = nullptr;
    Array<T> own;
    Array<T> grad;
    BackwardFn backward;
    bool requires_grad = false;
    std::string name;
  };

  const Bindings<T>* bindings_;
  bool record_;
  bool training_ = false;
  std::mt19937_64 rng_{0};
  std::deque<Node> nodes_;  // deque: values stay addressable while the graph grows
  std::map<std::string, std::size_t> named_;
};

}  // namespace costa
