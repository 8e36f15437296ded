#include "glaformer/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <type_traits>
#include <unordered_set>

namespace glaformer {

namespace {

std::atomic<std::uint64_t> g_seq{0};
thread_local bool t_grad_enabled = true;

template <typename T>
void check_finite(const char* op, const Tensor<T>& value) {
  // Non-finite values are exactly those whose exponent bits are all set.
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  constexpr Bits exponent = sizeof(T) == 4 ? Bits(0x7F800000u) : Bits(0x7FF0000000000000ull);
  const auto v = value.data();
  Bits bad = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    bad |= Bits((std::bit_cast<Bits>(v[i]) & exponent) == exponent);
  }
  if (!bad) return;
  for (std::size_t i = 0; i < value.size(); ++i) {
    if (!std::isfinite(value[i])) {
      throw NumericError(std::string("op '") + op + "' produced a non-finite value at element " +
                         std::to_string(i) + " of " + shape_str(value.shape()));
    }
  }
}

template <typename T>
void run_backward(const Var<T>& root, const Tensor<T>& seed) {
  Node<T>* root_node = root.node();
  if (!root_node) throw ContractError("backward() on an undefined tensor");
  if (!root_node->requires_grad) return;

  // Collect every node reachable through requires_grad edges.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{root_node};
  seen.insert(root_node);
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const Node<T>* a, const Node<T>* b) { return a->seq > b->seq; });

  for (Node<T>* n : order) {
    if (!n->is_leaf) n->grad = Tensor<T>();
  }

  auto& root_grad = root_node->grad_buffer();
  for (std::size_t i = 0; i < root_grad.size(); ++i) root_grad[i] += seed[i];

  for (Node<T>* n : order) {
    if (n->is_leaf || n->grad.empty()) continue;
    if (n->backward_fn) n->backward_fn(*n);
    n->grad = Tensor<T>();
  }
}

}  // namespace

std::uint64_t next_node_seq() { return g_seq.fetch_add(1, std::memory_order_relaxed); }

bool grad_enabled() { return t_grad_enabled; }
void set_grad_enabled(bool enabled) { t_grad_enabled = enabled; }

template <typename T>
Var<T> make_op(const char* op, Tensor<T> value, const std::vector<Var<T>>& inputs,
               std::function<void(Node<T>&)> backward_fn) {
  check_finite(op, value);
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = op;
  n->is_leaf = false;
  bool needs = false;
  if (t_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    n->requires_grad = true;
    n->inputs.reserve(inputs.size());
    for (const auto& in : inputs) n->inputs.push_back(in.node_ptr());
    n->backward_fn = std::move(backward_fn);
  }
  n->seq = next_node_seq();
  return Var<T>(std::move(n));
}

template <typename T>
void backward(const Var<T>& root) {
  if (root.value().size() != 1) {
    throw ContractError("backward() requires a scalar root, got shape " +
                        shape_str(root.shape()));
  }
  run_backward(root, Tensor<T>::scalar(T(1)));
}

template <typename T>
void backward(const Var<T>& root, const Tensor<T>& seed) {
  if (seed.shape() != root.shape()) {
    throw DimensionError("backward seed shape " + shape_str(seed.shape()) +
                         " does not match root " + shape_str(root.shape()));
  }
  run_backward(root, seed);
}

#define GLAFORMER_INSTANTIATE(T)                                                        \
  template Var<T> make_op<T>(const char*, Tensor<T>, const std::vector<Var<T>>&,       \
                             std::function<void(Node<T>&)>);                            \
  template void backward<T>(const Var<T>&);                                             \
  template void backward<T>(const Var<T>&, const Tensor<T>&);

GLAFORMER_INSTANTIATE(float)
GLAFORMER_INSTANTIATE(double)

}  // namespace glaformer
