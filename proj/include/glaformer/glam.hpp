#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "glaformer/layers.hpp"

namespace glaformer {

/// Head/channel layout of the global-local attention module. The first
/// `local_heads * head_dim()` channels feed the windowed local branch, the
/// rest feed the pooled global branch.
struct GlamConfig {
  std::size_t d = 256;
  std::size_t heads = 8;
  std::size_t local_heads = 4;
  std::size_t window = 3;

  std::size_t head_dim() const { return d / heads; }
  std::size_t local_channels() const { return local_heads * head_dim(); }
  std::size_t global_channels() const { return d - local_channels(); }

  /// Throws ConfigError on inconsistent head counts.
  void validate() const;
  /// Also checks that the window tiles an h×w map (PartitionError).
  void validate(std::size_t h, std::size_t w) const;
};

template <typename T>
struct QkvProjections {
  Projection<T> q, k, v;

  static QkvProjections init(std::size_t channels, Rng& rng) {
    return {Projection<T>::init(channels, channels, rng), Projection<T>::init(channels, channels, rng),
            Projection<T>::init(channels, channels, rng)};
  }

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    q.for_each(prefix + ".q", f);
    k.for_each(prefix + ".k", f);
    v.for_each(prefix + ".v", f);
  }
};

/// One attention branch: query/key/value projections plus the branch's own
/// output projection. Keeping the output projection per branch preserves
/// the locality of the local half after concatenation.
template <typename T>
struct AttentionBranch {
  QkvProjections<T> qkv;
  Projection<T> out;

  static AttentionBranch init(std::size_t channels, Rng& rng) {
    AttentionBranch b;
    b.qkv = QkvProjections<T>::init(channels, rng);
    b.out = Projection<T>::init(channels, channels, rng);
    return b;
  }

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    qkv.for_each(prefix, f);
    out.for_each(prefix + ".out", f);
  }
};

/// Branches are absent when they own no heads.
template <typename T>
struct GlamParams {
  std::optional<AttentionBranch<T>> local;
  std::optional<AttentionBranch<T>> global;

  static GlamParams init(const GlamConfig& cfg, Rng& rng);

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    if (local) local->for_each(prefix + ".local", f);
    if (global) global->for_each(prefix + ".global", f);
  }
};

/// Non-overlapping s×s tiling of a {c,h,w} map. `tokens` is
/// {rows*cols, c, s*s}; window (i, j) is index i*cols + j and its tokens
/// are ordered row-major.
template <typename T>
struct WindowedFeatures {
  Var<T> tokens;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t window = 0;

  std::size_t count() const { return rows * cols; }
  std::size_t channels() const { return tokens.shape()[1]; }
};

template <typename T>
WindowedFeatures<T> window_partition(const Var<T>& x, std::size_t s);

template <typename T>
Var<T> window_merge(const WindowedFeatures<T>& xw);

/// Softmax(Kᵀ Q / sqrt(D)) weights applied to V, per batch entry:
/// q is {B,D,n}, k and v are {B,D,m}; returns {B,D,n}.
template <typename T>
Var<T> attend(const Var<T>& q, const Var<T>& k, const Var<T>& v);

/// Window self-attention: per window and head, V·softmax_cols(KᵀQ/√D).
/// Channels of `xw` split into consecutive heads of `head_dim` channels.
template <typename T>
WindowedFeatures<T> local_attention(const WindowedFeatures<T>& xw, const QkvProjections<T>& p,
                                    std::size_t head_dim);

/// Full-resolution queries against keys/values projected from the
/// s×s-window average-pooled map. x is {c,h,w}; output is {c,h,w}.
template <typename T>
Var<T> global_attention(const Var<T>& x, const QkvProjections<T>& p, std::size_t s,
                        std::size_t head_dim);

/// Standard multi-head self-attention over every token of a {c,h,w} map;
/// the ablation replacement for the whole module.
template <typename T>
Var<T> full_attention(const Var<T>& x, const QkvProjections<T>& p, std::size_t head_dim);

/// Channel split into (local, global) groups, one branch each, branch output
/// projections, then concatenation back to d channels in (local, global)
/// order.
template <typename T>
Var<T> glam_forward(const Var<T>& x, const GlamConfig& cfg, const GlamParams<T>& params);

}  // namespace glaformer
