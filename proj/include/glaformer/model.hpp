#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "glaformer/cgfn.hpp"
#include "glaformer/glam.hpp"
#include "glaformer/hsi.hpp"
#include "glaformer/metrics.hpp"

namespace glaformer {

/// Block internals. `no_glam` swaps GLAM for full-map multi-head attention,
/// `no_cgfn` swaps CGFN for a plain FFN, `basic` does both.
enum class Variant { full, no_glam, no_cgfn, basic };

std::string to_string(Variant v);
/// Throws ConfigError on an unknown name.
Variant parse_variant(std::string_view name);

struct ModelConfig {
  std::size_t bands = 0;
  std::size_t patch = 9;
  std::size_t d = 256;
  std::size_t blocks = 4;
  std::size_t heads = 8;
  std::size_t local_heads = 4;
  std::size_t window = 3;
  Variant variant = Variant::full;
  bool shared_weights = true;
  bool use_norm = true;            // pre-norm before the attention and FFN stages
  std::size_t ffn_expansion = 2;   // d_hidden = ffn_expansion * d

  GlamConfig glam() const { return {d, heads, local_heads, window}; }
  std::size_t hidden() const { return ffn_expansion * d; }
  bool uses_glam() const { return variant == Variant::full || variant == Variant::no_cgfn; }
  bool uses_cgfn() const { return variant == Variant::full || variant == Variant::no_glam; }
  /// Throws ConfigError / PartitionError.
  void validate() const;
};

template <typename T>
struct NormParams {
  Var<T> gamma;
  Var<T> beta;

  static NormParams init(std::size_t d) {
    return {Var<T>::parameter(Tensor<T>({d}, T(1))), Var<T>::parameter(Tensor<T>({d}, T(0)))};
  }

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
  }
};

/// Exactly one of {glam, attention} and one of {cgfn, ffn} is set, as the
/// variant dictates. Norms are present when the model uses them.
template <typename T>
struct BlockParams {
  std::optional<NormParams<T>> norm1;
  std::optional<NormParams<T>> norm2;
  std::optional<GlamParams<T>> glam;
  std::optional<AttentionBranch<T>> attention;
  std::optional<CgfnParams<T>> cgfn;
  std::optional<FfnParams<T>> ffn;

  static BlockParams init(const ModelConfig& cfg, Rng& rng);

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    if (norm1) norm1->for_each(prefix + ".norm1", f);
    if (glam) glam->for_each(prefix + ".glam", f);
    if (attention) attention->for_each(prefix + ".attention", f);
    if (norm2) norm2->for_each(prefix + ".norm2", f);
    if (cgfn) cgfn->for_each(prefix + ".cgfn", f);
    if (ffn) ffn->for_each(prefix + ".ffn", f);
  }
};

template <typename T>
struct EncoderParams {
  Projection<T> embed;  // bands -> d
  std::vector<BlockParams<T>> blocks;

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    embed.for_each(prefix + ".embed", f);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      blocks[i].for_each(prefix + ".blocks." + std::to_string(i), f);
    }
  }
};

/// 3×3 conv (2d -> d), gelu, spatial mean, fc1 (d -> d/2), gelu, fc2 (-> 2).
template <typename T>
struct HeadParams {
  Var<T> conv_weight;  // {d, 2d, 3, 3}
  Var<T> conv_bias;    // {d}
  Projection<T> fc1;
  Projection<T> fc2;

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + ".conv.weight", conv_weight);
    f(prefix + ".conv.bias", conv_bias);
    fc1.for_each(prefix + ".fc1", f);
    fc2.for_each(prefix + ".fc2", f);
  }
};

/// Every learnable tensor of one model. With shared weights there is one
/// encoder, used by both branches.
template <typename T>
struct ModelParams {
  std::vector<EncoderParams<T>> encoders;
  HeadParams<T> head;

  /// Uniform(±1/sqrt(fan_in)) weights and biases, unit/zero norms, drawn
  /// in enumeration order from a generator seeded with `seed`.
  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

  const EncoderParams<T>& encoder(std::size_t branch) const {
    return encoders.size() == 1 ? encoders[0] : encoders.at(branch);
  }

  template <typename F>
  void for_each(F&& f) {
    if (encoders.size() == 1) {
      encoders[0].for_each("encoder", f);
    } else {
      for (std::size_t i = 0; i < encoders.size(); ++i) {
        encoders[i].for_each("encoder" + std::to_string(i), f);
      }
    }
    head.for_each("head", f);
  }

  /// Flat, deterministic enumeration; the handles alias this model's leaves.
  std::vector<NamedParam<T>> named() const {
    std::vector<NamedParam<T>> out;
    auto self = *this;
    self.for_each([&](const std::string& name, Var<T>& v) { out.push_back({name, v}); });
    return out;
  }

  /// Deep copy with fresh leaves (no shared gradients).
  ModelParams clone() const {
    auto copy = *this;
    copy.for_each([](const std::string&, Var<T>& v) { v = Var<T>::parameter(v.value()); });
    return copy;
  }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& p : named()) n += p.var.value().size();
    return n;
  }

  void zero_grad() const {
    for (auto& p : named()) p.var.zero_grad();
  }
};

/// Branch features before fusion.
template <typename T>
struct PairFeatures {
  Var<T> a;
  Var<T> b;
};

/// {bands,p,p} float patch as a constant of precision T.
template <typename T>
Var<T> patch_input(const Tensor<float>& patch);

/// Per-pixel spectral projection: {bands,p,p} -> {d,p,p}.
template <typename T>
Var<T> embed(const Var<T>& patch, const Projection<T>& proj, const ModelConfig& cfg);

template <typename T>
Var<T> glaformer_block(const Var<T>& x, const BlockParams<T>& params, const ModelConfig& cfg);

/// embed, then every block.
template <typename T>
Var<T> encode(const Var<T>& patch, const EncoderParams<T>& params, const ModelConfig& cfg);

template <typename T>
PairFeatures<T> encode_pair(const PatchPair& pp, const ModelParams<T>& params,
                            const ModelConfig& cfg);

/// Fused {2d,p,p} map -> logits {2} (index 0 = unchanged, 1 = changed).
template <typename T>
Var<T> classify(const Var<T>& fused, const HeadParams<T>& head);

/// Both branches, channel-concatenation fusion, head.
template <typename T>
Var<T> forward_pair(const PatchPair& pp, const ModelParams<T>& params, const ModelConfig& cfg);

/// Argmax decisions for the listed pixels (row-major indices), computed
/// without recording a graph. Pixels are split into contiguous chunks over
/// `threads` workers; results do not depend on the thread count.
template <typename T>
std::vector<std::uint8_t> predict_pixels(const HsiCube& t1, const HsiCube& t2,
                                         const ModelParams<T>& params, const ModelConfig& cfg,
                                         std::span<const std::size_t> pixels,
                                         std::size_t threads = 1);

/// Full-scene change map.
template <typename T>
ChangeMap predict_map(const HsiCube& t1, const HsiCube& t2, const ModelParams<T>& params,
                      const ModelConfig& cfg, std::size_t threads = 1);

}  // namespace glaformer
