#include "glaformer/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <string>

namespace glaformer {

namespace {

// Parallelism lives above the op level; BLAS itself stays sequential so
// results do not depend on its thread pool.
void blas_single_thread() {
  static std::once_flag once;
  std::call_once(once, [] { openblas_set_num_threads(1); });
}

// C[M×N] += op(A)·op(B). A is M×K (K×M when ta); B is K×N (N×K when tb).
void gemm_acc(bool ta, bool tb, std::size_t M, std::size_t N, std::size_t K, const float* A,
              const float* B, float* C) {
  blas_single_thread();
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              int(M), int(N), int(K), 1.0f, A, ta ? int(M) : int(K), B, tb ? int(K) : int(N), 1.0f,
              C, int(N));
}

void gemm_acc(bool ta, bool tb, std::size_t M, std::size_t N, std::size_t K, const double* A,
              const double* B, double* C) {
  blas_single_thread();
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              int(M), int(N), int(K), 1.0, A, ta ? int(M) : int(K), B, tb ? int(K) : int(N), 1.0,
              C, int(N));
}

template <typename T>
Node<T>* input(Node<T>& self, std::size_t i) {
  return self.inputs[i].get();
}

// Gradient buffer of input i, or nullptr when that input needs none.
template <typename T>
T* grad_of(Node<T>& self, std::size_t i) {
  Node<T>* n = self.inputs[i].get();
  if (!n->requires_grad) return nullptr;
  return n->grad_buffer().data().data();
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                       shape_str(b));
}

template <typename T>
void require_rank(const char* op, const Var<T>& x, std::size_t rank) {
  if (x.shape().size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(x.shape()));
  }
}

template <typename T>
T normal_cdf(T x) {
  return T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T normal_pdf(T x) {
  return std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
}

}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) shape_mismatch("matmul", a.shape(), b.shape());
  Tensor<T> out({m, n});
  gemm_acc(false, false, m, n, k, a.value().data().data(), b.value().data().data(),
           out.data().data());
  return make_op<T>("matmul", std::move(out), {a, b}, [m, n, k](Node<T>& self) {
    const T* g = self.grad.data().data();
    const T* av = input(self, 0)->value.data().data();
    const T* bv = input(self, 1)->value.data().data();
    if (T* ga = grad_of(self, 0)) gemm_acc(false, true, m, k, n, g, bv, ga);
    if (T* gb = grad_of(self, 1)) gemm_acc(true, false, k, n, m, av, g, gb);
  });
}

template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool transpose_a) {
  require_rank("bmm", a, 3);
  require_rank("bmm", b, 3);
  const std::size_t batch = a.shape()[0];
  const std::size_t m = transpose_a ? a.shape()[2] : a.shape()[1];
  const std::size_t k = transpose_a ? a.shape()[1] : a.shape()[2];
  const std::size_t n = b.shape()[2];
  if (b.shape()[0] != batch || b.shape()[1] != k) shape_mismatch("bmm", a.shape(), b.shape());
  Tensor<T> out({batch, m, n});
  const T* av = a.value().data().data();
  const T* bv = b.value().data().data();
  for (std::size_t i = 0; i < batch; ++i) {
    gemm_acc(transpose_a, false, m, n, k, av + i * m * k, bv + i * k * n,
             out.data().data() + i * m * n);
  }
  return make_op<T>("bmm", std::move(out), {a, b}, [=](Node<T>& self) {
    const T* g = self.grad.data().data();
    const T* av = input(self, 0)->value.data().data();
    const T* bv = input(self, 1)->value.data().data();
    T* ga = grad_of(self, 0);
    T* gb = grad_of(self, 1);
    for (std::size_t i = 0; i < batch; ++i) {
      const T* gi = g + i * m * n;
      const T* ai = av + i * m * k;
      const T* bi = bv + i * k * n;
      if (!transpose_a) {
        if (ga) gemm_acc(false, true, m, k, n, gi, bi, ga + i * m * k);
        if (gb) gemm_acc(true, false, k, n, m, ai, gi, gb + i * k * n);
      } else {
        if (ga) gemm_acc(false, true, k, m, n, bi, gi, ga + i * m * k);
        if (gb) gemm_acc(false, false, k, n, m, ai, gi, gb + i * k * n);
      }
    }
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  require_rank("transpose", a, 2);
  return permute(a, {1, 0});
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (shape_numel(shape) != x.value().size()) shape_mismatch("reshape", x.shape(), shape);
  return make_op<T>("reshape", x.value().reshaped(std::move(shape)), {x}, [](Node<T>& self) {
    T* gx = grad_of(self, 0);
    const auto g = self.grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& perm) {
  const Shape& in_shape = x.shape();
  const std::size_t rank = in_shape.size();
  if (perm.size() != rank) {
    throw DimensionError("permute: permutation of length " + std::to_string(perm.size()) +
                         " for tensor " + shape_str(in_shape));
  }
  std::vector<bool> used(rank, false);
  for (auto p : perm) {
    if (p >= rank || used[p]) throw DimensionError("permute: invalid permutation");
    used[p] = true;
  }
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank - 1; i > 0; --i) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(rank);
  std::vector<std::size_t> strides(rank);  // input stride of each output axis
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[perm[i]];
    strides[i] = in_strides[perm[i]];
  }
  // Output element j reads input element src[j].
  auto src = std::make_shared<std::vector<std::size_t>>(x.value().size());
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t j = 0; j < src->size(); ++j) {
    (*src)[j] = off;
    for (std::size_t ax = rank; ax-- > 0;) {
      if (++idx[ax] < out_shape[ax]) {
        off += strides[ax];
        break;
      }
      off -= strides[ax] * (out_shape[ax] - 1);
      idx[ax] = 0;
    }
  }
  Tensor<T> out(out_shape);
  const auto xv = x.value().data();
  for (std::size_t j = 0; j < src->size(); ++j) out[j] = xv[(*src)[j]];
  return make_op<T>("permute", std::move(out), {x}, [src](Node<T>& self) {
    T* gx = grad_of(self, 0);
    const auto g = self.grad.data();
    for (std::size_t j = 0; j < g.size(); ++j) gx[(*src)[j]] += g[j];
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) shape_mismatch("add", a.shape(), b.shape());
  Tensor<T> out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_op<T>("add", std::move(out), {a, b}, [](Node<T>& self) {
    const auto g = self.grad.data();
    for (std::size_t k = 0; k < 2; ++k) {
      if (T* gx = grad_of(self, k)) {
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) shape_mismatch("sub", a.shape(), b.shape());
  Tensor<T> out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_op<T>("sub", std::move(out), {a, b}, [](Node<T>& self) {
    const auto g = self.grad.data();
    if (T* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (T* gb = grad_of(self, 1)) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) shape_mismatch("mul", a.shape(), b.shape());
  Tensor<T> out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_op<T>("mul", std::move(out), {a, b}, [](Node<T>& self) {
    const auto g = self.grad.data();
    const auto av = input(self, 0)->value.data();
    const auto bv = input(self, 1)->value.data();
    if (T* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (T* gb = grad_of(self, 1)) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor;
  return make_op<T>("scale", std::move(out), {a}, [factor](Node<T>& self) {
    const auto g = self.grad.data();
    T* ga = grad_of(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

template <typename T>
Var<T> concat(std::span<const Var<T>> parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  Shape out_shape = parts[0].shape();
  const Shape tail(out_shape.begin() + 1, out_shape.end());
  std::size_t rows = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != out_shape.size() || !std::equal(tail.begin(), tail.end(), s.begin() + 1)) {
      shape_mismatch("concat", parts[0].shape(), s);
    }
    offsets.push_back(rows);
    rows += s[0];
  }
  out_shape[0] = rows;
  Tensor<T> out(out_shape);
  const std::size_t inner = shape_numel(tail);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto pv = parts[i].value().data();
    std::copy(pv.begin(), pv.end(), out.data().begin() + offsets[i] * inner);
  }
  std::vector<Var<T>> inputs(parts.begin(), parts.end());
  return make_op<T>("concat", std::move(out), inputs, [offsets, inner](Node<T>& self) {
    const auto g = self.grad.data();
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      if (T* gx = grad_of(self, i)) {
        const std::size_t n = self.inputs[i]->value.size();
        const T* src = g.data() + offsets[i] * inner;
        for (std::size_t j = 0; j < n; ++j) gx[j] += src[j];
      }
    }
  });
}

template <typename T>
std::vector<Var<T>> split(const Var<T>& x, std::span<const std::size_t> sizes) {
  const Shape& s = x.shape();
  std::size_t total = 0;
  for (auto n : sizes) {
    if (n == 0) throw DimensionError("split: zero-sized chunk");
    total += n;
  }
  if (total != s[0]) {
    throw DimensionError("split: chunk sizes sum to " + std::to_string(total) +
                         " but axis 0 of " + shape_str(s) + " has " + std::to_string(s[0]));
  }
  const std::size_t inner = x.value().size() / s[0];
  std::vector<Var<T>> out;
  std::size_t offset = 0;
  for (auto n : sizes) {
    Shape part_shape = s;
    part_shape[0] = n;
    const auto xv = x.value().data();
    Tensor<T> part(part_shape,
                   std::vector<T>(xv.begin() + offset * inner, xv.begin() + (offset + n) * inner));
    const std::size_t start = offset * inner;
    out.push_back(make_op<T>("split", std::move(part), {x}, [start](Node<T>& self) {
      T* gx = grad_of(self, 0) + start;
      const auto g = self.grad.data();
      for (std::size_t j = 0; j < g.size(); ++j) gx[j] += g[j];
    }));
    offset += n;
  }
  return out;
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const Shape& s = x.shape();
  const std::size_t channels = s[0];
  const std::size_t positions = x.value().size() / channels;
  const bool affine = gamma.defined();
  if (affine != beta.defined()) throw ContractError("layer_norm: gamma and beta must both be set");
  if (affine && (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels})) {
    shape_mismatch("layer_norm", s, gamma.shape());
  }
  const auto xv = x.value().data();
  auto xhat = std::make_shared<std::vector<T>>(xv.size());
  auto inv_std = std::make_shared<std::vector<T>>(positions);
  for (std::size_t p = 0; p < positions; ++p) {
    T mu = 0;
    for (std::size_t c = 0; c < channels; ++c) mu += xv[c * positions + p];
    mu /= T(channels);
    T var = 0;
    for (std::size_t c = 0; c < channels; ++c) {
      const T d = xv[c * positions + p] - mu;
      var += d * d;
    }
    var /= T(channels);
    const T r = T(1) / std::sqrt(var + eps);
    (*inv_std)[p] = r;
    for (std::size_t c = 0; c < channels; ++c) {
      (*xhat)[c * positions + p] = (xv[c * positions + p] - mu) * r;
    }
  }
  Tensor<T> out(s, *xhat);
  if (affine) {
    const auto gv = gamma.value().data();
    const auto bv = beta.value().data();
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t p = 0; p < positions; ++p) {
        out[c * positions + p] = gv[c] * out[c * positions + p] + bv[c];
      }
    }
  }
  std::vector<Var<T>> inputs{x};
  if (affine) {
    inputs.push_back(gamma);
    inputs.push_back(beta);
  }
  return make_op<T>(
      "layer_norm", std::move(out), inputs,
      [xhat, inv_std, channels, positions, affine](Node<T>& self) {
        const auto g = self.grad.data();
        const T* gv = affine ? input(self, 1)->value.data().data() : nullptr;
        if (affine) {
          T* gg = grad_of(self, 1);
          T* gb = grad_of(self, 2);
          for (std::size_t c = 0; c < channels; ++c) {
            for (std::size_t p = 0; p < positions; ++p) {
              const std::size_t i = c * positions + p;
              if (gg) gg[c] += g[i] * (*xhat)[i];
              if (gb) gb[c] += g[i];
            }
          }
        }
        T* gx = grad_of(self, 0);
        if (!gx) return;
        for (std::size_t p = 0; p < positions; ++p) {
          T mean_g = 0, mean_gx = 0;
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t i = c * positions + p;
            const T gh = affine ? g[i] * gv[c] : g[i];
            mean_g += gh;
            mean_gx += gh * (*xhat)[i];
          }
          mean_g /= T(channels);
          mean_gx /= T(channels);
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t i = c * positions + p;
            const T gh = affine ? g[i] * gv[c] : g[i];
            gx[i] += (*inv_std)[p] * (gh - mean_g - (*xhat)[i] * mean_gx);
          }
        }
      });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T acc = 0;
  for (T v : x.value().data()) acc += v;
  return make_op<T>("sum", Tensor<T>::scalar(acc), {x}, [](Node<T>& self) {
    const T g = self.grad[0];
    T* gx = grad_of(self, 0);
    const std::size_t n = input(self, 0)->value.size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += g;
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / T(x.value().size()));
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] * normal_cdf(out[i]);
  return make_op<T>("gelu", std::move(out), {x}, [](Node<T>& self) {
    const auto g = self.grad.data();
    const auto xv = input(self, 0)->value.data();
    T* gx = grad_of(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      gx[i] += g[i] * (normal_cdf(xv[i]) + xv[i] * normal_pdf(xv[i]));
    }
  });
}

template <typename T>
Var<T> softmax_cols(const Var<T>& x) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw DimensionError("softmax_cols: expected rank >= 2, got " + shape_str(s));
  const std::size_t rows = s[s.size() - 2], cols = s[s.size() - 1];
  const std::size_t mats = x.value().size() / (rows * cols);
  Tensor<T> out = x.value();
  for (std::size_t m = 0; m < mats; ++m) {
    T* base = out.data().data() + m * rows * cols;
    for (std::size_t c = 0; c < cols; ++c) {
      T mx = base[c];
      for (std::size_t r = 1; r < rows; ++r) mx = std::max(mx, base[r * cols + c]);
      T total = 0;
      for (std::size_t r = 0; r < rows; ++r) {
        const T e = std::exp(base[r * cols + c] - mx);
        base[r * cols + c] = e;
        total += e;
      }
      for (std::size_t r = 0; r < rows; ++r) base[r * cols + c] /= total;
    }
  }
  return make_op<T>("softmax_cols", std::move(out), {x}, [rows, cols, mats](Node<T>& self) {
    const T* g = self.grad.data().data();
    const T* y = self.value.data().data();
    T* gx = grad_of(self, 0);
    for (std::size_t m = 0; m < mats; ++m) {
      const std::size_t off = m * rows * cols;
      for (std::size_t c = 0; c < cols; ++c) {
        T dot = 0;
        for (std::size_t r = 0; r < rows; ++r) {
          dot += y[off + r * cols + c] * g[off + r * cols + c];
        }
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t i = off + r * cols + c;
          gx[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
}

template <typename T>
Var<T> conv1x1(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  require_rank("conv1x1", w, 2);
  const std::size_t d_out = w.shape()[0], d_in = w.shape()[1];
  if (x.shape()[0] != d_in) shape_mismatch("conv1x1", x.shape(), w.shape());
  const bool has_bias = b.defined();
  if (has_bias && b.shape() != Shape{d_out}) shape_mismatch("conv1x1", w.shape(), b.shape());
  const std::size_t n = x.value().size() / d_in;
  Shape out_shape = x.shape();
  out_shape[0] = d_out;
  Tensor<T> out(out_shape);
  if (has_bias) {
    const auto bv = b.value().data();
    for (std::size_t o = 0; o < d_out; ++o) {
      std::fill_n(out.data().begin() + o * n, n, bv[o]);
    }
  }
  gemm_acc(false, false, d_out, n, d_in, w.value().data().data(), x.value().data().data(),
           out.data().data());
  std::vector<Var<T>> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return make_op<T>("conv1x1", std::move(out), inputs, [=](Node<T>& self) {
    const T* g = self.grad.data().data();
    const T* xv = input(self, 0)->value.data().data();
    const T* wv = input(self, 1)->value.data().data();
    if (T* gx = grad_of(self, 0)) gemm_acc(true, false, d_in, n, d_out, wv, g, gx);
    if (T* gw = grad_of(self, 1)) gemm_acc(false, true, d_out, d_in, n, g, xv, gw);
    if (has_bias) {
      if (T* gb = grad_of(self, 2)) {
        for (std::size_t o = 0; o < d_out; ++o) {
          T acc = 0;
          for (std::size_t i = 0; i < n; ++i) acc += g[o * n + i];
          gb[o] += acc;
        }
      }
    }
  });
}

template <typename T>
Var<T> depthwise_conv(const Var<T>& x, const Var<T>& k) {
  require_rank("depthwise_conv", x, 3);
  require_rank("depthwise_conv", k, 3);
  const std::size_t d = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t s = k.shape()[1];
  if (k.shape()[2] != s) shape_mismatch("depthwise_conv", x.shape(), k.shape());
  if (s % 2 == 0) {
    throw ConfigError("depthwise_conv: kernel size must be odd, got " + std::to_string(s));
  }
  if (k.shape()[0] != d) shape_mismatch("depthwise_conv", x.shape(), k.shape());
  const long pad = static_cast<long>(s / 2);
  const long H = static_cast<long>(h), W = static_cast<long>(w);

  // Visits every in-image row segment of every tap: fn(out, in, len, tap)
  // covers out[out..out+len) against in[in..in+len).
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t c = 0; c < d; ++c) {
      for (std::size_t u = 0; u < s; ++u) {
        for (std::size_t v = 0; v < s; ++v) {
          const long du = static_cast<long>(u) - pad, dv = static_cast<long>(v) - pad;
          const long i0 = std::max(0L, -du), i1 = std::min(H, H - du);
          const long j0 = std::max(0L, -dv), j1 = std::min(W, W - dv);
          if (j1 <= j0) continue;
          for (long i = i0; i < i1; ++i) {
            const std::size_t out_row = (c * h + i) * w;
            const std::size_t in_row = (c * h + (i + du)) * w;
            fn(out_row + j0, in_row + (j0 + dv), std::size_t(j1 - j0), (c * s + u) * s + v);
          }
        }
      }
    }
  };

  Tensor<T> out(x.shape());
  {
    const T* xv = x.value().data().data();
    const T* kv = k.value().data().data();
    T* ov = out.data().data();
    for_each_tap([&](std::size_t o, std::size_t in, std::size_t len, std::size_t tap) {
      const T kt = kv[tap];
      for (std::size_t j = 0; j < len; ++j) ov[o + j] += kt * xv[in + j];
    });
  }
  return make_op<T>("depthwise_conv", std::move(out), {x, k}, [for_each_tap](Node<T>& self) {
    const T* g = self.grad.data().data();
    const T* xv = input(self, 0)->value.data().data();
    const T* kv = input(self, 1)->value.data().data();
    if (T* gx = grad_of(self, 0)) {
      for_each_tap([&](std::size_t o, std::size_t in, std::size_t len, std::size_t tap) {
        const T kt = kv[tap];
        for (std::size_t j = 0; j < len; ++j) gx[in + j] += kt * g[o + j];
      });
    }
    if (T* gk = grad_of(self, 1)) {
      for_each_tap([&](std::size_t o, std::size_t in, std::size_t len, std::size_t tap) {
        T acc = 0;
        for (std::size_t j = 0; j < len; ++j) acc += xv[in + j] * g[o + j];
        gk[tap] += acc;
      });
    }
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  require_rank("conv2d", x, 3);
  require_rank("conv2d", w, 4);
  const std::size_t c_in = x.shape()[0], h = x.shape()[1], wd = x.shape()[2];
  const std::size_t c_out = w.shape()[0], s = w.shape()[2];
  if (w.shape()[1] != c_in || w.shape()[3] != s) shape_mismatch("conv2d", x.shape(), w.shape());
  if (s % 2 == 0) throw ConfigError("conv2d: kernel size must be odd, got " + std::to_string(s));
  const bool has_bias = b.defined();
  if (has_bias && b.shape() != Shape{c_out}) shape_mismatch("conv2d", w.shape(), b.shape());
  const long pad = static_cast<long>(s / 2);
  const long H = static_cast<long>(h), W = static_cast<long>(wd);
  const std::size_t taps = c_in * s * s, hw = h * wd;

  // Row (ci, u, v) of the column matrix holds x[ci] shifted by (u, v), with
  // zeros where the shifted position leaves the map.
  auto for_each_col = [=](auto&& fn) {
    for (std::size_t ci = 0; ci < c_in; ++ci) {
      for (std::size_t u = 0; u < s; ++u) {
        for (std::size_t v = 0; v < s; ++v) {
          const std::size_t row = ((ci * s + u) * s + v) * hw;
          const long du = static_cast<long>(u) - pad, dv = static_cast<long>(v) - pad;
          const long i0 = std::max(0L, -du), i1 = std::min(H, H - du);
          const long j0 = std::max(0L, -dv), j1 = std::min(W, W - dv);
          for (long i = i0; i < i1; ++i) {
            const std::size_t in_row = (ci * h + (i + du)) * wd;
            for (long j = j0; j < j1; ++j) fn(row + i * wd + j, in_row + (j + dv));
          }
        }
      }
    }
  };

  auto cols = std::make_shared<std::vector<T>>(taps * hw, T(0));
  {
    const T* xv = x.value().data().data();
    T* cv = cols->data();
    for_each_col([&](std::size_t ci, std::size_t in) { cv[ci] = xv[in]; });
  }
  Tensor<T> out({c_out, h, wd});
  {
    T* ov = out.data().data();
    if (has_bias) {
      const auto bv = b.value().data();
      for (std::size_t o = 0; o < c_out; ++o) std::fill_n(ov + o * hw, hw, bv[o]);
    }
    gemm_acc(false, false, c_out, hw, taps, w.value().data().data(), cols->data(), ov);
  }
  std::vector<Var<T>> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return make_op<T>("conv2d", std::move(out), inputs, [=](Node<T>& self) {
    const T* g = self.grad.data().data();
    const T* wv = input(self, 1)->value.data().data();
    if (T* gw = grad_of(self, 1)) gemm_acc(false, true, c_out, taps, hw, g, cols->data(), gw);
    if (T* gx = grad_of(self, 0)) {
      std::vector<T> gcols(taps * hw, T(0));
      gemm_acc(true, false, taps, hw, c_out, wv, g, gcols.data());
      for_each_col([&](std::size_t ci, std::size_t in) { gx[in] += gcols[ci]; });
    }
    if (has_bias) {
      if (T* gb = grad_of(self, 2)) {
        for (std::size_t o = 0; o < c_out; ++o) {
          T acc = 0;
          for (std::size_t i = 0; i < hw; ++i) acc += g[o * hw + i];
          gb[o] += acc;
        }
      }
    }
  });
}

template <typename T>
Var<T> avg_pool_windows(const Var<T>& x, std::size_t s) {
  require_rank("avg_pool_windows", x, 3);
  const std::size_t d = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  if (s == 0 || h % s != 0 || w % s != 0) {
    throw PartitionError("avg_pool_windows: window " + std::to_string(s) +
                         " does not divide spatial size " + std::to_string(h) + "x" +
                         std::to_string(w));
  }
  const std::size_t gh = h / s, gw = w / s;
  const T inv = T(1) / T(s * s);
  Tensor<T> out({d, gh, gw});
  const auto xv = x.value().data();
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        out[(c * gh + i / s) * gw + j / s] += xv[(c * h + i) * w + j];
      }
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= inv;
  return make_op<T>("avg_pool_windows", std::move(out), {x}, [=](Node<T>& self) {
    const auto g = self.grad.data();
    T* gx = grad_of(self, 0);
    for (std::size_t c = 0; c < d; ++c) {
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          gx[(c * h + i) * w + j] += inv * g[(c * gh + i / s) * gw + j / s];
        }
      }
    }
  });
}

template <typename T>
Var<T> spatial_mean(const Var<T>& x) {
  const std::size_t c = x.shape()[0];
  const std::size_t n = x.value().size() / c;
  const T inv = T(1) / T(n);
  Tensor<T> out({c, 1});
  const auto xv = x.value().data();
  for (std::size_t o = 0; o < c; ++o) {
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += xv[o * n + i];
    out[o] = acc * inv;
  }
  return make_op<T>("spatial_mean", std::move(out), {x}, [c, n, inv](Node<T>& self) {
    const auto g = self.grad.data();
    T* gx = grad_of(self, 0);
    for (std::size_t o = 0; o < c; ++o) {
      for (std::size_t i = 0; i < n; ++i) gx[o * n + i] += g[o] * inv;
    }
  });
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::size_t label) {
  require_rank("cross_entropy", logits, 1);
  const auto z = logits.value().data();
  if (label >= z.size()) {
    throw ContractError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                        std::to_string(z.size()) + " classes");
  }
  const T mx = *std::max_element(z.begin(), z.end());
  T total = 0;
  for (T v : z) total += std::exp(v - mx);
  const T lse = mx + std::log(total);
  return make_op<T>("cross_entropy", Tensor<T>::scalar(lse - z[label]), {logits},
                    [label, lse](Node<T>& self) {
                      const T g = self.grad[0];
                      const auto z = input(self, 0)->value.data();
                      T* gz = grad_of(self, 0);
                      for (std::size_t i = 0; i < z.size(); ++i) {
                        const T p = std::exp(z[i] - lse);
                        gz[i] += g * (p - (i == label ? T(1) : T(0)));
                      }
                    });
}

#define GLAFORMER_INSTANTIATE(T)                                                      \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                            \
  template Var<T> bmm<T>(const Var<T>&, const Var<T>&, bool);                         \
  template Var<T> transpose<T>(const Var<T>&);                                        \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                   \
  template Var<T> permute<T>(const Var<T>&, const std::vector<std::size_t>&);         \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                               \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                               \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                               \
  template Var<T> scale<T>(const Var<T>&, T);                                         \
  template Var<T> concat<T>(std::span<const Var<T>>);                                 \
  template std::vector<Var<T>> split<T>(const Var<T>&, std::span<const std::size_t>); \
  template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);      \
  template Var<T> sum<T>(const Var<T>&);                                              \
  template Var<T> mean<T>(const Var<T>&);                                             \
  template Var<T> gelu<T>(const Var<T>&);                                             \
  template Var<T> softmax_cols<T>(const Var<T>&);                                     \
  template Var<T> conv1x1<T>(const Var<T>&, const Var<T>&, const Var<T>&);            \
  template Var<T> depthwise_conv<T>(const Var<T>&, const Var<T>&);                    \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&);             \
  template Var<T> avg_pool_windows<T>(const Var<T>&, std::size_t);                    \
  template Var<T> spatial_mean<T>(const Var<T>&);                                     \
  template Var<T> cross_entropy<T>(const Var<T>&, std::size_t);

GLAFORMER_INSTANTIATE(float)
GLAFORMER_INSTANTIATE(double)

}  // namespace glaformer
