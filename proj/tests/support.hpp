#pragma once

#include <random>

#include "glaformer/cgfn.hpp"
#include "glaformer/glam.hpp"
#include "oracles.hpp"

namespace support {

using glaformer::Shape;
using glaformer::Tensor;
using glaformer::Var;

inline Var<double> constant(glaformer::Shape shape, std::mt19937_64& rng) {
  return Var<double>::constant(oracle::random_tensor(std::move(shape), rng));
}

inline Var<double> parameter(glaformer::Shape shape, std::mt19937_64& rng) {
  return Var<double>::parameter(oracle::random_tensor(std::move(shape), rng));
}

inline oracle::Vec vals(const Var<double>& v) { return oracle::values(v.value()); }

inline oracle::Map map_of(const Var<double>& v) { return oracle::from_tensor(v.value()); }

inline oracle::Qkv qkv_of(const glaformer::QkvProjections<double>& p) {
  return {vals(p.q.weight), vals(p.q.bias), vals(p.k.weight),
          vals(p.k.bias), vals(p.v.weight), vals(p.v.bias)};
}

inline oracle::Cgfn cgfn_of(const glaformer::CgfnParams<double>& p) {
  oracle::Cgfn c;
  c.w0 = vals(p.entry.weight);
  c.b0 = vals(p.entry.bias);
  c.k3 = vals(p.dw3);
  c.k5 = vals(p.dw5);
  c.w2 = vals(p.payload_a.weight);
  c.b2 = vals(p.payload_a.bias);
  c.w3 = vals(p.payload_b.weight);
  c.b3 = vals(p.payload_b.bias);
  c.w4 = vals(p.exit.weight);
  c.b4 = vals(p.exit.bias);
  c.hidden = p.hidden();
  return c;
}

// The module as a composition of oracle pieces: split channels, attend per
// branch, project each branch, concatenate.
inline oracle::Map glam_reference(const oracle::Map& x, const glaformer::GlamConfig& cfg, const glaformer::GlamParams<double>& p) {
  const std::size_t D = cfg.head_dim(), cl = cfg.local_channels();
  auto slice = [&](std::size_t from, std::size_t count) {
    oracle::Map m(count, x.h, x.w);
    for (std::size_t i = 0; i < m.v.size(); ++i) m.v[i] = x.v[from * x.h * x.w + i];
    return m;
  };
  oracle::Map out(x.c, x.h, x.w);
  std::size_t at = 0;
  if (cl > 0) {
    const auto y = oracle::local_attention(slice(0, cl), qkv_of(p.local->qkv), cfg.window, D);
    const auto z = oracle::pointwise(y, vals(p.local->out.weight), vals(p.local->out.bias), cl);
    std::copy(z.v.begin(), z.v.end(), out.v.begin());
    at = z.v.size();
  }
  if (x.c > cl) {
    const auto y = oracle::global_attention(slice(cl, x.c - cl), qkv_of(p.global->qkv), cfg.window, D);
    const auto z = oracle::pointwise(y, vals(p.global->out.weight), vals(p.global->out.bias), x.c - cl);
    std::copy(z.v.begin(), z.v.end(), out.v.begin() + static_cast<long>(at));
  }
  return out;
}

inline void fill(Var<double>& v, double value) {
  auto& t = v.mutable_value();
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = value;
}

}  // namespace support
