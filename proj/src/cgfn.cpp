#include "glaformer/cgfn.hpp"

namespace glaformer {

template <typename T>
CgfnParams<T> CgfnParams<T>::init(std::size_t d, std::size_t d_hidden, Rng& rng) {
  if (d == 0 || d_hidden == 0) throw ConfigError("CGFN widths must be positive");
  CgfnParams p;
  p.entry = Projection<T>::init(d_hidden, d, rng);
  p.dw3 = uniform_param<T>({d_hidden, 3, 3}, 1.0 / 3.0, rng);
  p.dw5 = uniform_param<T>({d_hidden, 5, 5}, 1.0 / 5.0, rng);
  p.payload_a = Projection<T>::init(d_hidden, d_hidden, rng);
  p.payload_b = Projection<T>::init(d_hidden, d_hidden, rng);
  p.exit = Projection<T>::init(d, d_hidden, rng);
  return p;
}

template <typename T>
Var<T> cgfn_forward(const Var<T>& y, const CgfnParams<T>& params) {
  if (y.shape().size() != 3) {
    throw DimensionError("cgfn_forward expects a {d,h,w} map, got " + shape_str(y.shape()));
  }
  const auto u = params.entry(y);
  const auto small = depthwise_conv(u, params.dw3);
  const auto large = depthwise_conv(u, params.dw5);
  const auto path_a = mul(gelu(small), params.payload_a(large));
  const auto path_b = mul(gelu(large), params.payload_b(small));
  return add(params.exit(add(path_a, path_b)), y);
}

template <typename T>
Var<T> ffn_forward(const Var<T>& x, const FfnParams<T>& params) {
  return add(params.fc2(gelu(params.fc1(x))), x);
}

template struct CgfnParams<float>;
template struct CgfnParams<double>;
template Var<float> cgfn_forward<float>(const Var<float>&, const CgfnParams<float>&);
template Var<double> cgfn_forward<double>(const Var<double>&, const CgfnParams<double>&);
template Var<float> ffn_forward<float>(const Var<float>&, const FfnParams<float>&);
template Var<double> ffn_forward<double>(const Var<double>&, const FfnParams<double>&);

}  // namespace glaformer
