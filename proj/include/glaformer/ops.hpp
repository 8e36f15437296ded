#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "glaformer/autodiff.hpp"

namespace glaformer {

// Differentiable operations. Feature maps are channel-major: a map with d
// channels over an h×w grid has shape {d, h, w}. Every op is instantiated
// for float and double.

/// [m×k]·[k×n] -> [m×n].
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

/// Batched product over the leading axis: {B,m,k}·{B,k,n} -> {B,m,n}. With
/// `transpose_a`, `a` is {B,k,m} and each batch computes aᵀ·b.
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool transpose_a = false);

/// 2-D transpose.
template <typename T>
Var<T> transpose(const Var<T>& a);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

/// Axis permutation: output axis i is input axis perm[i].
template <typename T>
Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& perm);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
/// Elementwise (Hadamard) product.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, T factor);

/// Concatenation along axis 0 (the channel axis of a feature map).
template <typename T>
Var<T> concat(std::span<const Var<T>> parts);
/// Inverse of `concat`: consecutive chunks of axis 0 with the given sizes.
template <typename T>
std::vector<Var<T>> split(const Var<T>& x, std::span<const std::size_t> sizes);

/// Normalizes over axis 0 independently at each position (population
/// variance). `gamma`/`beta` are per-channel and may be undefined handles,
/// in which case no affine transform is applied.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

/// Sum / mean of all elements -> shape {1}.
template <typename T>
Var<T> sum(const Var<T>& x);
template <typename T>
Var<T> mean(const Var<T>& x);

/// Exact GELU, x·Φ(x) with the erf-based normal CDF.
template <typename T>
Var<T> gelu(const Var<T>& x);

/// Softmax down each column of every trailing [r×c] matrix (axis rank-2),
/// stabilized by subtracting the column maximum.
template <typename T>
Var<T> softmax_cols(const Var<T>& x);

/// Per-position linear map over axis 0: out[:,i] = w·x[:,i] + b.
/// x is {d_in, ...}, w is {d_out, d_in}, b is {d_out} or undefined.
template <typename T>
Var<T> conv1x1(const Var<T>& x, const Var<T>& w, const Var<T>& b);

/// Per-channel s×s cross-correlation with zero padding (s-1)/2, so the
/// spatial size is preserved. x is {d,h,w}, k is {d,s,s}, s odd.
template <typename T>
Var<T> depthwise_conv(const Var<T>& x, const Var<T>& k);

/// Dense k×k convolution with zero "same" padding. x is {c_in,h,w},
/// w is {c_out,c_in,k,k}, b is {c_out} or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b);

/// Mean over non-overlapping s×s windows: {d,h,w} -> {d,h/s,w/s}.
template <typename T>
Var<T> avg_pool_windows(const Var<T>& x, std::size_t s);

/// Mean over every axis but the first: {c, ...} -> {c, 1}.
template <typename T>
Var<T> spatial_mean(const Var<T>& x);

/// -log softmax(logits)[label] via log-sum-exp. logits has one axis.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::size_t label);

}  // namespace glaformer
