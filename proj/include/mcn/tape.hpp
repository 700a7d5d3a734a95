#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "mcn/tensor.hpp"

namespace mcn {

// A learnable tensor owned by a module. Gradients land in `grad` after
// Tape::backward.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool frozen = false;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    grad.fill(T(0));
  }
  void zero_grad_if_unset() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
  }
};

template <typename T>
class Tape;

// Handle to a node recorded on a tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode recorder. Nodes are appended in execution order; backward
// replays them in reverse, so each node's gradient is complete before its
// rule runs. Gradients from several consumers accumulate additively.
// Single-writer: do not record from more than one thread.
template <typename T>
class Tape {
 public:
  // Receives the finished gradient of the node it belongs to.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr, {}); }
  Var<T> leaf(Tensor<T> value) { return push(std::move(value), true, nullptr, {}); }
  Var<T> param(Parameter<T>& p) { return push(p.value, !p.frozen, &p, {}); }

  // Records an op output. The node tracks gradients iff any input does;
  // otherwise the backward rule is dropped.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
    bool rg = false;
    for (const auto& v : inputs) rg = rg || requires_grad(v.id());
    return push(std::move(value), rg, nullptr, rg ? std::move(backward) : BackwardFn{});
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Adds `g` into the gradient of node `id`; no-op for nodes without grad.
  void accumulate(std::size_t id, const Tensor<T>& g) {
    Node& node = nodes_[id];
    if (!node.requires_grad) return;
    grad_buffer(id) += g;
  }

  // Mutable gradient buffer, allocated to zeros on first touch.
  Tensor<T>& grad_buffer(std::size_t id) {
    Node& node = nodes_[id];
    if (node.grad.shape() != node.value.shape()) node.grad = Tensor<T>(node.value.shape());
    return node.grad;
  }

  // Null when no gradient reached the node.
  const Tensor<T>* grad(Var<T> v) const {
    const Node& node = nodes_[v.id()];
    return node.grad.shape() == node.value.shape() && node.value.size() > 0 ? &node.grad : nullptr;
  }

  void backward(Var<T> root, Tensor<T> seed) {
    root.value().require_same_shape(seed, "backward seed");
    grad_buffer(root.id()) = std::move(seed);
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!node.requires_grad || node.grad.shape() != node.value.shape()) continue;
      if (node.backward) node.backward(*this, node.grad);
      if (node.param) {
        node.param->zero_grad_if_unset();
        node.param->grad += node.grad;
      }
    }
  }

  // Seeds with ones; intended for scalar losses.
  void backward(Var<T> root) { backward(root, Tensor<T>(root.shape(), T(1))); }

  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };

  Var<T> push(Tensor<T> value, bool rg, Parameter<T>* p, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor<T>(), rg, p, std::move(fn)});
    return Var<T>(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;  // stable references across push_back
};

}  // namespace mcn
