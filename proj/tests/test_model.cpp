#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "glaformer/model.hpp"
#include "glaformer/training.hpp"
#include "support.hpp"

using namespace glaformer;
using support::constant;
using support::fill;
using support::map_of;
using support::vals;

namespace {

ModelConfig toy(Variant v = Variant::full) {
  ModelConfig cfg;
  cfg.bands = 3;
  cfg.patch = 3;
  cfg.d = 8;
  cfg.blocks = 1;
  cfg.heads = 2;
  cfg.local_heads = 1;
  cfg.window = 3;
  cfg.variant = v;
  return cfg;
}

HsiCube random_cube(std::size_t h, std::size_t w, std::size_t b, std::uint64_t seed) {
  HsiCube cube(h, w, b);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  for (auto& v : cube.values) v = dist(rng);
  return cube;
}

PatchPair random_pair(const ModelConfig& cfg, std::uint64_t seed) {
  const auto t1 = random_cube(cfg.patch, cfg.patch, cfg.bands, seed);
  const auto t2 = random_cube(cfg.patch, cfg.patch, cfg.bands, seed + 1);
  return extract_patch_pair(t1, t2, {cfg.patch / 2, cfg.patch / 2}, cfg.patch);
}

oracle::Map add(oracle::Map a, const oracle::Map& b) {
  for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
  return a;
}

oracle::Map norm(const oracle::Map& x, const std::optional<NormParams<double>>& n) {
  if (!n) return x;
  return oracle::layer_norm(x, vals(n->gamma), vals(n->beta));
}

// One block written from the oracle pieces: pre-norm mixing with a
// residual, then the feed-forward stage on the normalized sum.
oracle::Map block_reference(const oracle::Map& x, const BlockParams<double>& p, const ModelConfig& cfg) {
  const auto n1 = norm(x, p.norm1);
  oracle::Map mixed;
  if (p.glam) {
    mixed = support::glam_reference(n1, cfg.glam(), *p.glam);
  } else {
    const auto att = oracle::full_attention(n1, support::qkv_of(p.attention->qkv), cfg.glam().head_dim());
    mixed = oracle::pointwise(att, vals(p.attention->out.weight), vals(p.attention->out.bias), cfg.d);
  }
  const auto n2 = norm(add(x, mixed), p.norm2);
  if (p.cgfn) return oracle::cgfn(n2, support::cgfn_of(*p.cgfn));
  auto h = oracle::pointwise(n2, vals(p.ffn->fc1.weight), vals(p.ffn->fc1.bias), cfg.hidden());
  for (auto& v : h.v) v = oracle::gelu(v);
  return add(oracle::pointwise(h, vals(p.ffn->fc2.weight), vals(p.ffn->fc2.bias), cfg.d), n2);
}

oracle::Vec head_reference(const oracle::Map& fused, const HeadParams<double>& h) {
  const std::size_t d = h.conv_bias.shape()[0];
  auto c = oracle::conv2d(fused, vals(h.conv_weight), vals(h.conv_bias), d, 3);
  for (auto& v : c.v) v = oracle::gelu(v);
  oracle::Map pooled(d, 1, 1);
  for (std::size_t ch = 0; ch < d; ++ch) {
    for (std::size_t i = 0; i < c.h * c.w; ++i) pooled.v[ch] += c.v[ch * c.h * c.w + i] / double(c.h * c.w);
  }
  auto z = oracle::pointwise(pooled, vals(h.fc1.weight), vals(h.fc1.bias), d / 2);
  for (auto& v : z.v) v = oracle::gelu(v);
  return oracle::pointwise(z, vals(h.fc2.weight), vals(h.fc2.bias), 2).v;
}

oracle::Map patch_map(const Tensor<float>& t) {
  oracle::Map m(t.dim(0), t.dim(1), t.dim(2));
  for (std::size_t i = 0; i < t.size(); ++i) m.v[i] = t[i];
  return m;
}

oracle::Map encode_reference(const Tensor<float>& patch, const EncoderParams<double>& e,
                             const ModelConfig& cfg) {
  auto x = oracle::pointwise(patch_map(patch), vals(e.embed.weight), vals(e.embed.bias), cfg.d);
  for (const auto& b : e.blocks) x = block_reference(x, b, cfg);
  return x;
}

const Variant kVariants[] = {Variant::full, Variant::no_glam, Variant::no_cgfn, Variant::basic};

}  // namespace

TEST(Variants, NamesRoundTrip) {
  for (auto v : kVariants) EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_THROW(parse_variant("glamless"), ConfigError);
}

TEST(Config, ValidationErrors) {
  auto cfg = toy();
  cfg.patch = 4;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = toy();
  cfg.patch = 5;
  EXPECT_THROW(cfg.validate(), PartitionError);
  cfg = toy();
  cfg.heads = 3;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = toy();
  cfg.local_heads = 3;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = toy();
  cfg.bands = 0;
  EXPECT_THROW(ModelParams<double>::init(cfg, 0), ConfigError);
}

TEST(Embed, IdentityProjectionKeepsPatch) {
  auto cfg = toy();
  cfg.d = 4;
  cfg.bands = 4;
  cfg.heads = 2;
  Projection<double> proj;
  Tensor<double> eye({4, 4}, 0.0);
  for (std::size_t i = 0; i < 4; ++i) eye.at({i, i}) = 1.0;
  proj.weight = Var<double>::constant(eye);
  proj.bias = Var<double>::constant(Tensor<double>({4}, 0.0));
  std::mt19937_64 rng(1);
  auto x = constant({4, 3, 3}, rng);
  const auto y = embed(x, proj, cfg);
  EXPECT_EQ(y.value(), x.value());
}

TEST(Embed, ShapeAndBandMismatch) {
  const auto cfg = toy();
  const auto p = ModelParams<double>::init(cfg, 2);
  std::mt19937_64 rng(3);
  EXPECT_EQ(embed(constant({3, 3, 3}, rng), p.encoders[0].embed, cfg).shape(), (Shape{8, 3, 3}));
  EXPECT_THROW(embed(constant({4, 3, 3}, rng), p.encoders[0].embed, cfg), ConfigError);
}

TEST(Embed, DefaultWidthOnThirtyBands) {
  ModelConfig cfg;
  cfg.bands = 30;
  Rng rng(4);
  const auto proj = Projection<double>::init(cfg.d, 30, rng);
  std::mt19937_64 gen(5);
  EXPECT_EQ(embed(constant({30, 9, 9}, gen), proj, cfg).shape(), (Shape{256, 9, 9}));
}

TEST(Embed, GradientsMatchFiniteDifferences) {
  auto cfg = toy();
  cfg.d = 4;
  Rng rng(6);
  auto proj = Projection<double>::init(4, 3, rng);
  std::mt19937_64 gen(7);
  const auto x = constant({3, 3, 3}, gen);
  const auto c = constant({4, 3, 3}, gen);
  std::vector<NamedParam<double>> params;
  proj.for_each("embed", [&](const std::string& name, Var<double>& v) { params.push_back({name, v}); });
  const auto report = grad_check([&] { return sum(mul(embed(x, proj, cfg), c)); }, params);
  EXPECT_TRUE(report.passed) << report.summary();
}

TEST(Block, ZeroResidualBranchesWithoutNormsAreIdentity) {
  for (auto v : kVariants) {
    auto cfg = toy(v);
    cfg.use_norm = false;
    auto p = ModelParams<double>::init(cfg, 4);
    auto& b = p.encoders[0].blocks[0];
    EXPECT_FALSE(b.norm1.has_value());
    if (b.glam) {
      fill(b.glam->local->out.weight, 0);
      fill(b.glam->local->out.bias, 0);
      fill(b.glam->global->out.weight, 0);
      fill(b.glam->global->out.bias, 0);
    } else {
      fill(b.attention->out.weight, 0);
      fill(b.attention->out.bias, 0);
    }
    if (b.cgfn) {
      fill(b.cgfn->exit.weight, 0);
      fill(b.cgfn->exit.bias, 0);
    } else {
      fill(b.ffn->fc2.weight, 0);
      fill(b.ffn->fc2.bias, 0);
    }
    std::mt19937_64 rng(5);
    auto x = constant({8, 3, 3}, rng);
    EXPECT_EQ(glaformer_block(x, b, cfg).value(), x.value()) << to_string(v);
  }
}

TEST(Block, PreservesShapeForEveryVariant) {
  for (auto v : kVariants) {
    ModelConfig cfg = toy(v);
    cfg.patch = 9;
    cfg.heads = 4;
    cfg.local_heads = 2;
    const auto p = ModelParams<double>::init(cfg, 6);
    std::mt19937_64 rng(7);
    auto x = constant({8, 6, 6}, rng);
    EXPECT_EQ(glaformer_block(x, p.encoders[0].blocks[0], cfg).shape(), (Shape{8, 6, 6})) << to_string(v);
  }
}

TEST(Block, MatchesReferenceForEveryVariant) {
  for (auto v : kVariants) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      ModelConfig cfg = toy(v);
      cfg.heads = 4;
      cfg.local_heads = 2;
      cfg.patch = 9;
      auto p = ModelParams<double>::init(cfg, seed);
      auto& b = p.encoders[0].blocks[0];
      std::mt19937_64 rng(seed + 10);
      // Non-trivial norm parameters so the affine part is exercised.
      b.norm1->gamma = support::parameter({8}, rng);
      b.norm2->beta = support::parameter({8}, rng);
      auto x = constant({8, 6, 6}, rng);
      const auto ref = block_reference(map_of(x), b, cfg);
      ASSERT_LE(oracle::max_abs_diff(vals(glaformer_block(x, b, cfg)), ref.v), 1e-11)
          << to_string(v) << " seed " << seed;
    }
  }
}

TEST(Forward, MatchesReferenceForEveryVariant) {
  for (auto v : kVariants) {
    for (bool shared : {true, false}) {
      auto cfg = toy(v);
      cfg.blocks = 2;
      cfg.shared_weights = shared;
      const auto p = ModelParams<double>::init(cfg, 8);
      const auto pp = random_pair(cfg, 9);
      const auto fa = encode_reference(pp.a, p.encoder(0), cfg);
      const auto fb = encode_reference(pp.b, p.encoder(1), cfg);
      oracle::Map fused(2 * cfg.d, fa.h, fa.w);
      std::copy(fa.v.begin(), fa.v.end(), fused.v.begin());
      std::copy(fb.v.begin(), fb.v.end(), fused.v.begin() + static_cast<long>(fa.v.size()));
      const auto logits = forward_pair(pp, p, cfg);
      ASSERT_EQ(logits.shape(), (Shape{2}));
      EXPECT_LE(oracle::max_abs_diff(vals(logits), head_reference(fused, p.head)), 1e-11)
          << to_string(v) << (shared ? " shared" : " unshared");
    }
  }
}

TEST(Forward, SharedEncoderTreatsBranchesAlike) {
  const auto cfg = toy();
  const auto p = ModelParams<double>::init(cfg, 10);
  auto pp = random_pair(cfg, 11);
  const auto f = encode_pair(pp, p, cfg);
  std::swap(pp.a, pp.b);
  const auto g = encode_pair(pp, p, cfg);
  EXPECT_EQ(f.a.value(), g.b.value());
  EXPECT_EQ(f.b.value(), g.a.value());
}

TEST(Forward, IdenticalPatchesGiveIdenticalFeatures) {
  const auto cfg = toy();
  const auto p = ModelParams<double>::init(cfg, 13);
  auto pp = random_pair(cfg, 14);
  pp.b = pp.a;
  const auto f = encode_pair(pp, p, cfg);
  EXPECT_EQ(f.a.value(), f.b.value());
  for (auto v : forward_pair(pp, p, cfg).value().vec()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Params, NamesAndSharing) {
  auto cfg = toy();
  const auto shared = ModelParams<double>::init(cfg, 0);
  cfg.shared_weights = false;
  const auto unshared = ModelParams<double>::init(cfg, 0);
  std::set<std::string> names;
  for (const auto& p : shared.named()) names.insert(p.name);
  EXPECT_EQ(names.size(), shared.named().size());
  EXPECT_TRUE(names.count("encoder.embed.weight"));
  EXPECT_TRUE(names.count("encoder.blocks.0.glam.local.q.weight"));
  EXPECT_TRUE(names.count("encoder.blocks.0.cgfn.dw5"));
  EXPECT_TRUE(names.count("head.conv.weight"));
  EXPECT_TRUE(names.count("head.fc2.bias"));
  const auto head_numel = 8u * 16 * 9 + 8 + 4 * 8 + 4 + 2 * 4 + 2;
  const auto encoder_numel = shared.numel() - head_numel;
  EXPECT_EQ(unshared.numel(), head_numel + 2 * encoder_numel);
  EXPECT_EQ(unshared.named().front().name, "encoder0.embed.weight");
}

TEST(Params, InitializationIsSeededAndBounded) {
  const auto cfg = toy();
  const auto a = ModelParams<double>::init(cfg, 3), b = ModelParams<double>::init(cfg, 3);
  const auto c = ModelParams<double>::init(cfg, 4);
  const auto na = a.named(), nb = b.named(), nc = c.named();
  bool any_diff = false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    EXPECT_EQ(na[i].var.value(), nb[i].var.value());
    any_diff = any_diff || !(na[i].var.value() == nc[i].var.value());
  }
  EXPECT_TRUE(any_diff);
  for (const auto& p : na) {
    if (p.name.find("norm") != std::string::npos) continue;
    const auto& shape = p.var.shape();
    std::size_t fan_in = 1;
    if (p.name == "head.conv.weight" || p.name == "head.conv.bias") {
      fan_in = 2 * cfg.d * 9;
    } else if (p.name.ends_with(".dw3")) {
      fan_in = 9;
    } else if (p.name.ends_with(".dw5")) {
      fan_in = 25;
    } else if (p.name.ends_with(".weight")) {
      fan_in = shape[1];
    } else {
      // biases share the fan-in of the weight listed just before them
      continue;
    }
    const double bound = 1.0 / std::sqrt(double(fan_in));
    for (double v : p.var.value().data()) ASSERT_LE(std::abs(v), bound) << p.name;
  }
}

TEST(Params, CloneIsIndependent) {
  const auto cfg = toy();
  const auto a = ModelParams<double>::init(cfg, 5);
  auto b = a.clone();
  auto nb = b.named();
  support::fill(nb[0].var, 0.25);
  EXPECT_NE(a.named()[0].var.value()[0], 0.25);
}

TEST(Predict, DeterministicAndThreadIndependent) {
  const auto cfg = toy();
  const auto p = ModelParams<float>::init(cfg, 6);
  const auto t1 = random_cube(7, 8, 3, 20), t2 = random_cube(7, 8, 3, 21);
  const auto a = predict_map(t1, t2, p, cfg, 1);
  const auto b = predict_map(t1, t2, p, cfg, 1);
  const auto c = predict_map(t1, t2, p, cfg, 3);
  EXPECT_EQ(a.height, 7u);
  EXPECT_EQ(a.width, 8u);
  EXPECT_EQ(a.decisions, b.decisions);
  EXPECT_EQ(a.decisions, c.decisions);
}

TEST(Predict, PixelDecisionsAreLogitArgmax) {
  const auto cfg = toy();
  const auto p = ModelParams<double>::init(cfg, 7);
  const auto t1 = random_cube(5, 5, 3, 22), t2 = random_cube(5, 5, 3, 23);
  std::vector<std::size_t> pixels(25);
  std::iota(pixels.begin(), pixels.end(), 0);
  const auto decisions = predict_pixels(t1, t2, p, cfg, pixels, 2);
  for (std::size_t i = 0; i < 25; ++i) {
    const auto pp = extract_patch_pair(t1, t2, {i / 5, i % 5}, cfg.patch);
    const auto l = forward_pair(pp, p, cfg).value();
    EXPECT_EQ(decisions[i], l[1] > l[0] ? 1 : 0);
  }
}

TEST(Predict, UnchangedBiasGivesEmptyMap) {
  const auto cfg = toy();
  auto p = ModelParams<float>::init(cfg, 8);
  p.head.fc2.weight = Var<float>::parameter(Tensor<float>({2, 4}, 0.0f));
  p.head.fc2.bias = Var<float>::parameter(Tensor<float>({2}, {1.0f, 0.0f}));
  const auto t1 = random_cube(6, 6, 3, 24), t2 = random_cube(6, 6, 3, 25);
  for (auto v : predict_map(t1, t2, p, cfg, 2).decisions) EXPECT_EQ(v, 0);
}

TEST(Predict, BandMismatchRejected) {
  const auto cfg = toy();
  const auto p = ModelParams<float>::init(cfg, 9);
  const auto t = random_cube(4, 4, 5, 26);
  EXPECT_THROW(predict_map(t, t, p, cfg), ConfigError);
}

TEST(Predict, FloatAndDoubleAgree) {
  const auto cfg = toy();
  const auto pd = ModelParams<double>::init(cfg, 10);
  const auto pf = ModelParams<float>::init(cfg, 10);
  const auto pp = random_pair(cfg, 27);
  const auto ld = forward_pair(pp, pd, cfg).value();
  const auto lf = forward_pair(pp, pf, cfg).value();
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(ld[i], lf[i], 1e-4);
}

class ModelGradCheck : public ::testing::TestWithParam<Variant> {};

TEST_P(ModelGradCheck, MatchesFiniteDifferences) {
  auto cfg = toy(GetParam());
  const auto p = ModelParams<double>::init(cfg, 11);
  auto pp = random_pair(cfg, 28);
  for (std::uint8_t label : {0, 1}) {
    pp.label = label;
    const auto report = grad_check_model(cfg, p, pp);
    EXPECT_TRUE(report.passed) << to_string(GetParam()) << ": " << report.summary();
  }
}

TEST(ModelGradCheckUnshared, MatchesFiniteDifferences) {
  auto cfg = toy();
  cfg.shared_weights = false;
  const auto p = ModelParams<double>::init(cfg, 12);
  auto pp = random_pair(cfg, 29);
  pp.label = 1;
  const auto report = grad_check_model(cfg, p, pp);
  EXPECT_TRUE(report.passed) << report.summary();
}

TEST(BlockGradCheck, EveryParameterOnSixBySixInput) {
  auto cfg = toy();
  cfg.patch = 6;
  Rng rng(15);
  auto block = BlockParams<double>::init(cfg, rng);
  std::mt19937_64 gen(16);
  const auto x = constant({8, 6, 6}, gen);
  const auto c = constant({8, 6, 6}, gen);
  std::vector<NamedParam<double>> params;
  block.for_each("block", [&](const std::string& name, Var<double>& v) { params.push_back({name, v}); });
  // Mean keeps the probe O(1); the key bias has an exactly zero gradient and
  // the difference quotient noise scales with the loss.
  const auto report = grad_check(
      [&] { return scale(sum(mul(glaformer_block(x, block, cfg), c)), 1.0 / 288.0); }, params);
  EXPECT_TRUE(report.passed) << report.summary();
  EXPECT_GT(params.size(), 20u);
}

INSTANTIATE_TEST_SUITE_P(Variants, ModelGradCheck, ::testing::ValuesIn(kVariants),
                         [](const auto& info) { return to_string(info.param); });
