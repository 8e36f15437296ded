#include "glaformer/glam.hpp"

#include <cmath>
#include <vector>

namespace glaformer {

void GlamConfig::validate() const {
  if (heads == 0) throw ConfigError("GLAM needs at least one head");
  if (d == 0 || d % heads != 0) {
    throw ConfigError("GLAM: heads (" + std::to_string(heads) + ") must divide d (" +
                      std::to_string(d) + ")");
  }
  if (local_heads > heads) {
    throw ConfigError("GLAM: local_heads (" + std::to_string(local_heads) + ") exceeds heads (" +
                      std::to_string(heads) + ")");
  }
  if (window == 0) throw ConfigError("GLAM: window size must be positive");
}

void GlamConfig::validate(std::size_t h, std::size_t w) const {
  validate();
  if (h % window != 0 || w % window != 0) {
    throw PartitionError("window " + std::to_string(window) + " does not tile a " +
                         std::to_string(h) + "x" + std::to_string(w) + " map");
  }
}

template <typename T>
GlamParams<T> GlamParams<T>::init(const GlamConfig& cfg, Rng& rng) {
  cfg.validate();
  GlamParams p;
  if (cfg.local_channels() > 0) p.local = AttentionBranch<T>::init(cfg.local_channels(), rng);
  if (cfg.global_channels() > 0) p.global = AttentionBranch<T>::init(cfg.global_channels(), rng);
  return p;
}

template <typename T>
WindowedFeatures<T> window_partition(const Var<T>& x, std::size_t s) {
  if (x.shape().size() != 3) {
    throw DimensionError("window_partition expects a {c,h,w} map, got " + shape_str(x.shape()));
  }
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  if (s == 0 || h % s != 0 || w % s != 0) {
    throw PartitionError("window " + std::to_string(s) + " does not tile a " + std::to_string(h) +
                         "x" + std::to_string(w) + " map");
  }
  const std::size_t rows = h / s, cols = w / s;
  // {c, rows, s, cols, s} -> {rows, cols, c, s, s}
  auto t = permute(reshape(x, {c, rows, s, cols, s}), {1, 3, 0, 2, 4});
  return {reshape(t, {rows * cols, c, s * s}), rows, cols, s};
}

template <typename T>
Var<T> window_merge(const WindowedFeatures<T>& xw) {
  const std::size_t c = xw.channels(), s = xw.window;
  auto t = reshape(xw.tokens, {xw.rows, xw.cols, c, s, s});
  return reshape(permute(t, {2, 0, 3, 1, 4}), {c, xw.rows * s, xw.cols * s});
}

template <typename T>
Var<T> attend(const Var<T>& q, const Var<T>& k, const Var<T>& v) {
  const T inv_sqrt = T(1) / std::sqrt(T(q.shape()[1]));
  auto scores = scale(bmm(k, q, /*transpose_a=*/true), inv_sqrt);  // {B, m, n}
  return bmm(v, softmax_cols(scores));
}

namespace {

// Applies a 1×1 projection to every token of a {B, c, n} token tensor.
template <typename T>
Var<T> project_tokens(const Var<T>& tokens, const Projection<T>& p) {
  const std::size_t batch = tokens.shape()[0], n = tokens.shape()[2];
  auto projected = p(permute(tokens, {1, 0, 2}));  // {c_out, B, n}
  const std::size_t c_out = projected.shape()[0];
  return permute(reshape(projected, {c_out, batch, n}), {1, 0, 2});
}

template <typename T>
std::size_t heads_for(std::size_t channels, std::size_t head_dim) {
  if (head_dim == 0 || channels % head_dim != 0) {
    throw DimensionError("branch of " + std::to_string(channels) +
                         " channels is not a whole number of " + std::to_string(head_dim) +
                         "-channel heads");
  }
  return channels / head_dim;
}

}  // namespace

template <typename T>
WindowedFeatures<T> local_attention(const WindowedFeatures<T>& xw, const QkvProjections<T>& p,
                                    std::size_t head_dim) {
  const std::size_t windows = xw.count(), c = xw.channels();
  const std::size_t n = xw.window * xw.window;
  const std::size_t heads = heads_for<T>(c, head_dim);
  const Shape per_head{windows * heads, head_dim, n};
  auto q = reshape(project_tokens(xw.tokens, p.q), per_head);
  auto k = reshape(project_tokens(xw.tokens, p.k), per_head);
  auto v = reshape(project_tokens(xw.tokens, p.v), per_head);
  auto out = attend(q, k, v);
  return {reshape(out, {windows, c, n}), xw.rows, xw.cols, xw.window};
}

template <typename T>
Var<T> global_attention(const Var<T>& x, const QkvProjections<T>& p, std::size_t s,
                        std::size_t head_dim) {
  if (x.shape().size() != 3) {
    throw DimensionError("global_attention expects a {c,h,w} map, got " + shape_str(x.shape()));
  }
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t heads = heads_for<T>(c, head_dim);
  auto pooled = avg_pool_windows(x, s);  // {c, h/s, w/s}
  const std::size_t m = pooled.shape()[1] * pooled.shape()[2];
  auto q = reshape(p.q(x), {heads, head_dim, h * w});
  auto k = reshape(p.k(pooled), {heads, head_dim, m});
  auto v = reshape(p.v(pooled), {heads, head_dim, m});
  return reshape(attend(q, k, v), {c, h, w});
}

template <typename T>
Var<T> full_attention(const Var<T>& x, const QkvProjections<T>& p, std::size_t head_dim) {
  if (x.shape().size() != 3) {
    throw DimensionError("full_attention expects a {c,h,w} map, got " + shape_str(x.shape()));
  }
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t heads = heads_for<T>(c, head_dim);
  const Shape per_head{heads, head_dim, h * w};
  auto out = attend(reshape(p.q(x), per_head), reshape(p.k(x), per_head), reshape(p.v(x), per_head));
  return reshape(out, {c, h, w});
}

template <typename T>
Var<T> glam_forward(const Var<T>& x, const GlamConfig& cfg, const GlamParams<T>& params) {
  if (x.shape().size() != 3 || x.shape()[0] != cfg.d) {
    throw DimensionError("glam_forward expects a {" + std::to_string(cfg.d) + ",h,w} map, got " +
                         shape_str(x.shape()));
  }
  cfg.validate(x.shape()[1], x.shape()[2]);
  const std::size_t cl = cfg.local_channels(), cg = cfg.global_channels();
  if (bool(params.local) != (cl > 0) || bool(params.global) != (cg > 0)) {
    throw ContractError("GLAM parameters do not match the configured head split");
  }

  std::vector<Var<T>> halves;
  if (cl > 0 && cg > 0) {
    const std::size_t sizes[] = {cl, cg};
    halves = split(x, std::span<const std::size_t>(sizes));
  } else {
    halves = {x};
  }

  std::vector<Var<T>> outputs;
  std::size_t next = 0;
  if (cl > 0) {
    auto windows = window_partition(halves[next++], cfg.window);
    auto attended = window_merge(local_attention(windows, params.local->qkv, cfg.head_dim()));
    outputs.push_back(params.local->out(attended));
  }
  if (cg > 0) {
    auto attended = global_attention(halves[next++], params.global->qkv, cfg.window, cfg.head_dim());
    outputs.push_back(params.global->out(attended));
  }
  if (outputs.size() == 1) return outputs[0];
  return concat(std::span<const Var<T>>(outputs));
}

#define GLAFORMER_INSTANTIATE(T)                                                               \
  template struct GlamParams<T>;                                                                \
  template WindowedFeatures<T> window_partition<T>(const Var<T>&, std::size_t);                \
  template Var<T> window_merge<T>(const WindowedFeatures<T>&);                                 \
  template Var<T> attend<T>(const Var<T>&, const Var<T>&, const Var<T>&);                      \
  template WindowedFeatures<T> local_attention<T>(const WindowedFeatures<T>&,                  \
                                                  const QkvProjections<T>&, std::size_t);      \
  template Var<T> global_attention<T>(const Var<T>&, const QkvProjections<T>&, std::size_t,    \
                                      std::size_t);                                            \
  template Var<T> full_attention<T>(const Var<T>&, const QkvProjections<T>&, std::size_t);     \
  template Var<T> glam_forward<T>(const Var<T>&, const GlamConfig&, const GlamParams<T>&);

GLAFORMER_INSTANTIATE(float)
GLAFORMER_INSTANTIATE(double)

}  // namespace glaformer
