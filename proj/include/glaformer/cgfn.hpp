#pragma once

#include <cstddef>
#include <string>

#include "glaformer/layers.hpp"

namespace glaformer {

/// Weights of the cross-gated feed-forward network. `entry` expands d to
/// d_hidden once and feeds both paths; the depth-wise kernels carry no
/// bias.
template <typename T>
struct CgfnParams {
  Projection<T> entry;        // d -> d_hidden
  Var<T> dw3;                 // {d_hidden, 3, 3}
  Var<T> dw5;                 // {d_hidden, 5, 5}
  Projection<T> payload_a;    // applied after dw5, gated by gelu(dw3)
  Projection<T> payload_b;    // applied after dw3, gated by gelu(dw5)
  Projection<T> exit;         // d_hidden -> d

  static CgfnParams init(std::size_t d, std::size_t d_hidden, Rng& rng);

  std::size_t hidden() const { return dw3.shape()[0]; }

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    entry.for_each(prefix + ".entry", f);
    f(prefix + ".dw3", dw3);
    f(prefix + ".dw5", dw5);
    payload_a.for_each(prefix + ".payload_a", f);
    payload_b.for_each(prefix + ".payload_b", f);
    exit.for_each(prefix + ".exit", f);
  }
};

/// u = entry(y);
/// gating = gelu(dw3(u)) ⊙ payload_a(dw5(u)) + gelu(dw5(u)) ⊙ payload_b(dw3(u));
/// returns exit(gating) + y.
template <typename T>
Var<T> cgfn_forward(const Var<T>& y, const CgfnParams<T>& params);

/// Two-layer feed-forward network with residual (1×1, gelu, 1×1, + x); the
/// ablation replacement for CGFN.
template <typename T>
struct FfnParams {
  Projection<T> fc1;
  Projection<T> fc2;

  static FfnParams init(std::size_t d, std::size_t d_hidden, Rng& rng) {
    return {Projection<T>::init(d_hidden, d, rng), Projection<T>::init(d, d_hidden, rng)};
  }

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    fc1.for_each(prefix + ".fc1", f);
    fc2.for_each(prefix + ".fc2", f);
  }
};

template <typename T>
Var<T> ffn_forward(const Var<T>& x, const FfnParams<T>& params);

}  // namespace glaformer
