#include "glaformer/model.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace glaformer {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_glam: return "no_glam";
    case Variant::no_cgfn: return "no_cgfn";
    case Variant::basic: return "basic";
  }
  return "full";
}

Variant parse_variant(std::string_view name) {
  if (name == "full") return Variant::full;
  if (name == "no_glam") return Variant::no_glam;
  if (name == "no_cgfn") return Variant::no_cgfn;
  if (name == "basic") return Variant::basic;
  throw ConfigError("unknown model variant '" + std::string(name) +
                    "' (expected full, no_glam, no_cgfn or basic)");
}

void ModelConfig::validate() const {
  if (bands == 0) throw ConfigError("model bands must be positive");
  if (patch == 0 || patch % 2 == 0) {
    throw ConfigError("patch size must be odd, got " + std::to_string(patch));
  }
  if (blocks == 0) throw ConfigError("model needs at least one block");
  if (d < 2 || d % 2 != 0) throw ConfigError("d must be even and at least 2");
  if (ffn_expansion == 0) throw ConfigError("ffn_expansion must be positive");
  glam().validate(patch, patch);
}

template <typename T>
BlockParams<T> BlockParams<T>::init(const ModelConfig& cfg, Rng& rng) {
  BlockParams b;
  if (cfg.use_norm) b.norm1 = NormParams<T>::init(cfg.d);
  if (cfg.uses_glam()) {
    b.glam = GlamParams<T>::init(cfg.glam(), rng);
  } else {
    b.attention = AttentionBranch<T>::init(cfg.d, rng);
  }
  if (cfg.use_norm) b.norm2 = NormParams<T>::init(cfg.d);
  if (cfg.uses_cgfn()) {
    b.cgfn = CgfnParams<T>::init(cfg.d, cfg.hidden(), rng);
  } else {
    b.ffn = FfnParams<T>::init(cfg.d, cfg.hidden(), rng);
  }
  return b;
}

template <typename T>
ModelParams<T> ModelParams<T>::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ModelParams p;
  const std::size_t n_enc = cfg.shared_weights ? 1 : 2;
  for (std::size_t e = 0; e < n_enc; ++e) {
    EncoderParams<T> enc;
    enc.embed = Projection<T>::init(cfg.d, cfg.bands, rng);
    for (std::size_t i = 0; i < cfg.blocks; ++i) enc.blocks.push_back(BlockParams<T>::init(cfg, rng));
    p.encoders.push_back(std::move(enc));
  }
  const double conv_bound = 1.0 / std::sqrt(double(2 * cfg.d * 9));
  p.head.conv_weight = uniform_param<T>({cfg.d, 2 * cfg.d, 3, 3}, conv_bound, rng);
  p.head.conv_bias = uniform_param<T>({cfg.d}, conv_bound, rng);
  p.head.fc1 = Projection<T>::init(cfg.d / 2, cfg.d, rng);
  p.head.fc2 = Projection<T>::init(2, cfg.d / 2, rng);
  return p;
}

template <typename T>
Var<T> patch_input(const Tensor<float>& patch) {
  Tensor<T> t(patch.shape());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(patch[i]);
  return Var<T>::constant(std::move(t));
}

template <typename T>
Var<T> embed(const Var<T>& patch, const Projection<T>& proj, const ModelConfig& cfg) {
  const Shape expected{cfg.bands, cfg.patch, cfg.patch};
  if (patch.shape() != expected) {
    throw ConfigError("patch shape " + shape_str(patch.shape()) + " does not match the model's " +
                      shape_str(expected));
  }
  return proj(patch);
}

namespace {

template <typename T>
Var<T> maybe_norm(const Var<T>& x, const std::optional<NormParams<T>>& norm) {
  if (!norm) return x;
  return layer_norm(x, norm->gamma, norm->beta);
}

}  // namespace

template <typename T>
Var<T> glaformer_block(const Var<T>& x, const BlockParams<T>& params, const ModelConfig& cfg) {
  const auto normed = maybe_norm(x, params.norm1);
  Var<T> mixed;
  if (params.glam) {
    mixed = glam_forward(normed, cfg.glam(), *params.glam);
  } else if (params.attention) {
    mixed = params.attention->out(full_attention(normed, params.attention->qkv, cfg.glam().head_dim()));
  } else {
    throw ContractError("block has no attention parameters");
  }
  const auto x1 = add(x, mixed);
  const auto normed1 = maybe_norm(x1, params.norm2);
  if (params.cgfn) return cgfn_forward(normed1, *params.cgfn);
  if (params.ffn) return ffn_forward(normed1, *params.ffn);
  throw ContractError("block has no feed-forward parameters");
}

template <typename T>
Var<T> encode(const Var<T>& patch, const EncoderParams<T>& params, const ModelConfig& cfg) {
  auto x = embed(patch, params.embed, cfg);
  for (const auto& block : params.blocks) x = glaformer_block(x, block, cfg);
  return x;
}

template <typename T>
PairFeatures<T> encode_pair(const PatchPair& pp, const ModelParams<T>& params,
                            const ModelConfig& cfg) {
  return {encode(patch_input<T>(pp.a), params.encoder(0), cfg),
          encode(patch_input<T>(pp.b), params.encoder(1), cfg)};
}

template <typename T>
Var<T> classify(const Var<T>& fused, const HeadParams<T>& head) {
  auto h = gelu(conv2d(fused, head.conv_weight, head.conv_bias));
  auto pooled = spatial_mean(h);  // {d, 1}
  auto logits = head.fc2(gelu(head.fc1(pooled)));
  return reshape(logits, {2});
}

template <typename T>
Var<T> forward_pair(const PatchPair& pp, const ModelParams<T>& params, const ModelConfig& cfg) {
  const auto f = encode_pair(pp, params, cfg);
  const Var<T> parts[] = {f.a, f.b};
  return classify(concat(std::span<const Var<T>>(parts)), params.head);
}

template <typename T>
std::vector<std::uint8_t> predict_pixels(const HsiCube& t1, const HsiCube& t2,
                                         const ModelParams<T>& params, const ModelConfig& cfg,
                                         std::span<const std::size_t> pixels, std::size_t threads) {
  check_paired(t1, t2);
  if (t1.bands != cfg.bands) {
    throw ConfigError("cube has " + std::to_string(t1.bands) + " bands, model expects " +
                      std::to_string(cfg.bands));
  }
  std::vector<std::uint8_t> out(pixels.size(), 0);
  auto work = [&](std::size_t begin, std::size_t end) {
    NoGradGuard no_grad;
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t p = pixels[i];
      const auto pp = extract_patch_pair(t1, t2, {p / t1.width, p % t1.width}, cfg.patch);
      const auto logits = forward_pair(pp, params, cfg).value();
      out[i] = logits[1] > logits[0] ? 1 : 0;
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, pixels.size()));
  if (threads == 1) {
    work(0, pixels.size());
    return out;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (pixels.size() + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk, end = std::min(pixels.size(), begin + chunk);
    if (begin < end) pool.emplace_back(work, begin, end);
  }
  for (auto& th : pool) th.join();
  return out;
}

template <typename T>
ChangeMap predict_map(const HsiCube& t1, const HsiCube& t2, const ModelParams<T>& params,
                      const ModelConfig& cfg, std::size_t threads) {
  std::vector<std::size_t> all(t1.pixels());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  ChangeMap map(t1.height, t1.width);
  map.decisions = predict_pixels(t1, t2, params, cfg, all, threads);
  return map;
}

#define GLAFORMER_INSTANTIATE(T)                                                                 \
  template struct BlockParams<T>;                                                                \
  template struct ModelParams<T>;                                                                \
  template Var<T> patch_input<T>(const Tensor<float>&);                                          \
  template Var<T> embed<T>(const Var<T>&, const Projection<T>&, const ModelConfig&);             \
  template Var<T> glaformer_block<T>(const Var<T>&, const BlockParams<T>&, const ModelConfig&);  \
  template Var<T> encode<T>(const Var<T>&, const EncoderParams<T>&, const ModelConfig&);         \
  template PairFeatures<T> encode_pair<T>(const PatchPair&, const ModelParams<T>&,               \
                                          const ModelConfig&);                                   \
  template Var<T> classify<T>(const Var<T>&, const HeadParams<T>&);                              \
  template Var<T> forward_pair<T>(const PatchPair&, const ModelParams<T>&, const ModelConfig&);  \
  template std::vector<std::uint8_t> predict_pixels<T>(const HsiCube&, const HsiCube&,           \
                                                       const ModelParams<T>&, const ModelConfig&, \
                                                       std::span<const std::size_t>, std::size_t); \
  template ChangeMap predict_map<T>(const HsiCube&, const HsiCube&, const ModelParams<T>&,       \
                                    const ModelConfig&, std::size_t);

GLAFORMER_INSTANTIATE(float)
GLAFORMER_INSTANTIATE(double)

}  // namespace glaformer
