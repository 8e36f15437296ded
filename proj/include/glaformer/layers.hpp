#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "glaformer/ops.hpp"

namespace glaformer {

using Rng = std::mt19937_64;

template <typename T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

/// Parameter tensor drawn uniformly from [-bound, bound].
template <typename T>
Var<T> uniform_param(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(dist(rng));
  return Var<T>::parameter(std::move(t));
}

/// 1×1 convolution (per-position linear map) with bias.
template <typename T>
struct Projection {
  Var<T> weight;  // {d_out, d_in}
  Var<T> bias;    // {d_out}

  static Projection init(std::size_t d_out, std::size_t d_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(double(d_in));
    Projection p;
    p.weight = uniform_param<T>({d_out, d_in}, bound, rng);
    p.bias = uniform_param<T>({d_out}, bound, rng);
    return p;
  }

  Var<T> operator()(const Var<T>& x) const { return conv1x1(x, weight, bias); }

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

}  // namespace glaformer
