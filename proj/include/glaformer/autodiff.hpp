#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "glaformer/tensor.hpp"

namespace glaformer {

template <typename T>
struct Node;

/// One recorded op application. Nodes are ordered by `seq`, which grows
/// monotonically with creation; every input therefore has a smaller `seq`
/// than the node consuming it, which is the topological order used by
/// `backward`.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until the first accumulation
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;
  std::uint64_t seq = 0;
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";

  /// Gradient buffer, allocated as zeros on first use.
  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

std::uint64_t next_node_seq();

/// Thread-local switch: while disabled, ops produce constants and record no
/// graph. Used for inference.
bool grad_enabled();
void set_grad_enabled(bool enabled);

class NoGradGuard {
 public:
  NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
  ~NoGradGuard() { set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Shared handle to a graph node. Copies alias the same node, so a parameter
/// used twice (siamese branches) accumulates both gradient contributions.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  /// Leaf that receives gradients.
  static Var parameter(Tensor<T> value) { return leaf(std::move(value), true); }
  /// Leaf that never receives gradients.
  static Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor<T>& value() const { return checked().value; }
  const Shape& shape() const { return checked().value.shape(); }
  bool requires_grad() const { return checked().requires_grad; }
  bool is_leaf() const { return checked().is_leaf; }

  /// In-place access for optimizers; only leaves may be mutated.
  Tensor<T>& mutable_value() {
    auto& n = checked();
    if (!n.is_leaf) throw ContractError("mutable_value() on a non-leaf tensor");
    return n.value;
  }

  bool has_grad() const { return !checked().grad.empty(); }
  const Tensor<T>& grad() const {
    const auto& n = checked();
    if (n.grad.empty()) throw ContractError("tensor has no gradient");
    return n.grad;
  }
  Tensor<T>& mutable_grad() { return checked().grad_buffer(); }
  void zero_grad() { checked().grad = Tensor<T>(); }

  Node<T>* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const noexcept { return node_; }

 private:
  static Var leaf(Tensor<T> value, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->seq = next_node_seq();
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  Node<T>& checked() const {
    if (!node_) throw ContractError("use of an undefined tensor handle");
    return *node_;
  }

  std::shared_ptr<Node<T>> node_;
};

/// Records an op. Throws NumericError when `value` contains NaN or Inf.
/// When grad mode is off, or no input requires a gradient, the result is a
/// constant and `backward_fn` is dropped.
template <typename T>
Var<T> make_op(const char* op, Tensor<T> value, const std::vector<Var<T>>& inputs,
               std::function<void(Node<T>&)> backward_fn);

/// Reverse sweep from a single-element root. Leaf gradients accumulate
/// (`+=`) across calls; call `zero_grad` on parameters between steps.
/// Intermediate gradients are recomputed on every call, so calling twice
/// adds exactly twice the derivative to each leaf.
template <typename T>
void backward(const Var<T>& root);

/// As above with an explicit seed gradient for the root (any shape).
template <typename T>
void backward(const Var<T>& root, const Tensor<T>& seed);

}  // namespace glaformer
