#include <gtest/gtest.h>

#include <random>

#include "glaformer/glam.hpp"
#include "glaformer/training.hpp"
#include "support.hpp"

using namespace glaformer;
using support::constant;
using support::map_of;
using support::qkv_of;
using support::vals;

namespace {

GlamParams<double> random_glam(const GlamConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  return GlamParams<double>::init(cfg, rng);
}

}  // namespace

TEST(WindowPartition, TokenOrderAndRoundTrip) {
  std::mt19937_64 rng(1);
  auto x = constant({2, 6, 9}, rng);
  const auto w = window_partition(x, 3);
  EXPECT_EQ(w.rows, 2u);
  EXPECT_EQ(w.cols, 3u);
  EXPECT_EQ(w.tokens.shape(), (Shape{6, 2, 9}));
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t t = 0; t < 9; ++t) {
          ASSERT_EQ(w.tokens.value().at({i * 3 + j, c, t}),
                    x.value().at({c, i * 3 + t / 3, j * 3 + t % 3}));
        }
      }
    }
  }
  EXPECT_EQ(window_merge(w).value(), x.value());
}

TEST(WindowPartition, WindowCounts) {
  std::mt19937_64 rng(20);
  const auto nine = window_partition(constant({4, 9, 9}, rng), 3);
  EXPECT_EQ(nine.count(), 9u);
  EXPECT_EQ(nine.tokens.shape(), (Shape{9, 4, 9}));
  auto small = constant({4, 3, 3}, rng);
  const auto one = window_partition(small, 3);
  EXPECT_EQ(one.count(), 1u);
  EXPECT_EQ(one.tokens.value().vec(), small.value().vec());
  auto x = constant({4, 6, 6}, rng);
  EXPECT_EQ(window_merge(window_partition(x, 3)).value(), x.value());
}

TEST(WindowPartition, NonDividingWindowThrows) {
  std::mt19937_64 rng(2);
  EXPECT_THROW(window_partition(constant({2, 7, 6}, rng), 3), PartitionError);
}

TEST(LocalAttention, MatchesOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    auto x = constant({4, 6, 6}, rng);
    Rng prng(seed + 100);
    const auto p = QkvProjections<double>::init(4, prng);
    const auto y = window_merge(local_attention(window_partition(x, 3), p, 2));
    const auto ref = oracle::local_attention(map_of(x), qkv_of(p), 3, 2);
    ASSERT_LE(oracle::max_abs_diff(vals(y), ref.v), 1e-12) << "seed " << seed;
  }
}

TEST(LocalAttention, SingleTokenWindowReturnsValues) {
  std::mt19937_64 rng(21);
  auto x = constant({4, 3, 3}, rng);
  Rng prng(22);
  const auto p = QkvProjections<double>::init(4, prng);
  const auto y = window_merge(local_attention(window_partition(x, 1), p, 2));
  EXPECT_LE(oracle::max_abs_diff(vals(y), vals(p.v(x))), 1e-15);
}

TEST(LocalAttention, ZeroKeysAverageValues) {
  std::mt19937_64 rng(23);
  auto x = constant({4, 3, 3}, rng);
  Rng prng(24);
  auto p = QkvProjections<double>::init(4, prng);
  support::fill(p.k.weight, 0.0);
  support::fill(p.k.bias, 0.0);
  const auto y = window_merge(local_attention(window_partition(x, 3), p, 2)).value();
  const auto v = p.v(x).value();
  for (std::size_t c = 0; c < 4; ++c) {
    double mean = 0;
    for (std::size_t i = 0; i < 9; ++i) mean += v[c * 9 + i] / 9.0;
    for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(y[c * 9 + i], mean, 1e-14);
  }
}

TEST(GlobalAttention, NineByNineShapeAndConstantField) {
  Rng prng(25);
  const auto p = QkvProjections<double>::init(4, prng);
  std::mt19937_64 rng(26);
  EXPECT_EQ(global_attention(constant({4, 9, 9}, rng), p, 3, 2).shape(), (Shape{4, 9, 9}));
  Tensor<double> flat({4, 9, 9});
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i] = 0.2 * double(i / 81) - 0.1;
  const auto y = global_attention(Var<double>::constant(flat), p, 3, 2).value();
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t i = 1; i < 81; ++i) EXPECT_NEAR(y[c * 81 + i], y[c * 81], 1e-14);
  }
}

TEST(GlobalAttention, MatchesOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    auto x = constant({4, 6, 6}, rng);
    Rng prng(seed + 200);
    const auto p = QkvProjections<double>::init(4, prng);
    const auto ref = oracle::global_attention(map_of(x), qkv_of(p), 3, 2);
    ASSERT_LE(oracle::max_abs_diff(vals(global_attention(x, p, 3, 2)), ref.v), 1e-12) << "seed " << seed;
  }
}

TEST(GlobalAttention, PooledKeysAreWindowMeans) {
  // With identity projections and a single window covering the map, every
  // query sees one key, so the output is the map mean everywhere.
  std::mt19937_64 rng(3);
  auto x = constant({2, 3, 3}, rng);
  QkvProjections<double> p;
  for (auto* proj : {&p.q, &p.k, &p.v}) {
    proj->weight = Var<double>::constant(Tensor<double>({2, 2}, {1, 0, 0, 1}));
    proj->bias = Var<double>::constant(Tensor<double>({2}, 0.0));
  }
  const auto y = global_attention(x, p, 3, 1).value();
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0;
    for (std::size_t i = 0; i < 9; ++i) mean += x.value()[c * 9 + i] / 9.0;
    for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(y[c * 9 + i], mean, 1e-14);
  }
}

TEST(FullAttention, MatchesOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    auto x = constant({4, 3, 6}, rng);
    Rng prng(seed + 300);
    const auto p = QkvProjections<double>::init(4, prng);
    const auto ref = oracle::full_attention(map_of(x), qkv_of(p), 2);
    ASSERT_LE(oracle::max_abs_diff(vals(full_attention(x, p, 2)), ref.v), 1e-12) << "seed " << seed;
  }
}

TEST(Glam, MatchesComposedOracle) {
  const GlamConfig cfg{8, 4, 2, 3};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    auto x = constant({8, 6, 6}, rng);
    const auto p = random_glam(cfg, seed + 400);
    const auto y = glam_forward(x, cfg, p);
    ASSERT_EQ(y.shape(), (Shape{8, 6, 6}));
    ASSERT_LE(oracle::max_abs_diff(vals(y), support::glam_reference(map_of(x), cfg, p).v), 1e-12) << "seed " << seed;
  }
}

TEST(Glam, DegenerateSplitsUseOneBranch) {
  std::mt19937_64 rng(5);
  auto x = constant({8, 6, 6}, rng);
  for (std::size_t lh : {0u, 4u}) {
    const GlamConfig cfg{8, 4, lh, 3};
    const auto p = random_glam(cfg, 6);
    EXPECT_EQ(p.local.has_value(), lh > 0);
    EXPECT_EQ(p.global.has_value(), lh < 4);
    const auto y = glam_forward(x, cfg, p);
    EXPECT_LE(oracle::max_abs_diff(vals(y), support::glam_reference(map_of(x), cfg, p).v), 1e-12);
  }
}

TEST(Glam, LocalChannelsOnlySeeTheirWindow) {
  const GlamConfig cfg{8, 4, 2, 3};
  const auto p = random_glam(cfg, 7);
  std::mt19937_64 rng(8);
  auto x = constant({8, 6, 6}, rng);
  Tensor<double> bumped = x.value();
  for (std::size_t c = 0; c < 8; ++c) bumped.at({c, 1, 1}) += 0.5;  // inside window (0, 0)
  const auto a = glam_forward(x, cfg, p).value();
  const auto b = glam_forward(Var<double>::constant(bumped), cfg, p).value();
  bool global_moved_far = false;
  for (std::size_t c = 0; c < 8; ++c) {
    for (std::size_t r = 0; r < 6; ++r) {
      for (std::size_t col = 0; col < 6; ++col) {
        const bool in_window = r < 3 && col < 3;
        const double delta = std::abs(a.at({c, r, col}) - b.at({c, r, col}));
        if (c < cfg.local_channels() && !in_window) EXPECT_EQ(delta, 0.0);
        if (c >= cfg.local_channels() && !in_window && delta > 1e-9) global_moved_far = true;
      }
    }
  }
  EXPECT_TRUE(global_moved_far);
}

TEST(Glam, ConstantInputGivesSpatiallyConstantOutput) {
  const GlamConfig cfg{8, 4, 2, 3};
  const auto p = random_glam(cfg, 9);
  Tensor<double> x({8, 6, 6});
  for (std::size_t c = 0; c < 8; ++c) {
    for (std::size_t i = 0; i < 36; ++i) x[c * 36 + i] = 0.1 * double(c) - 0.3;
  }
  const auto y = glam_forward(Var<double>::constant(x), cfg, p).value();
  for (std::size_t c = 0; c < 8; ++c) {
    for (std::size_t i = 1; i < 36; ++i) EXPECT_NEAR(y[c * 36 + i], y[c * 36], 1e-14);
  }
}

TEST(Glam, InvalidConfigurations) {
  EXPECT_THROW((GlamConfig{8, 3, 1, 3}.validate()), ConfigError);
  EXPECT_THROW((GlamConfig{8, 4, 5, 3}.validate()), ConfigError);
  EXPECT_THROW((GlamConfig{8, 0, 0, 3}.validate()), ConfigError);
  const GlamConfig cfg{8, 4, 2, 3};
  const auto p = random_glam(cfg, 10);
  std::mt19937_64 rng(11);
  EXPECT_THROW(glam_forward(constant({8, 7, 6}, rng), cfg, p), PartitionError);
  EXPECT_THROW(glam_forward(constant({4, 6, 6}, rng), cfg, p), DimensionError);
}

TEST(Glam, ParameterNames) {
  auto p = random_glam(GlamConfig{8, 4, 2, 3}, 12);
  std::vector<std::string> names;
  p.for_each("glam", [&](const std::string& n, Var<double>&) { names.push_back(n); });
  ASSERT_EQ(names.size(), 16u);
  EXPECT_EQ(names.front(), "glam.local.q.weight");
  EXPECT_EQ(names[6], "glam.local.out.weight");
  EXPECT_EQ(names.back(), "glam.global.out.bias");
}

TEST(Glam, GradCheck) {
  const GlamConfig cfg{8, 4, 2, 3};
  auto p = random_glam(cfg, 13);
  std::mt19937_64 rng(14);
  auto x = support::parameter({8, 6, 6}, rng);
  auto probe = constant({8, 6, 6}, rng);
  std::vector<NamedParam<double>> params{{"x", x}};
  p.for_each("glam", [&](const std::string& n, Var<double>& v) { params.push_back({n, v}); });
  const auto report = grad_check([&] { return sum(mul(glam_forward(x, cfg, p), probe)); }, params);
  EXPECT_TRUE(report.passed) << report.summary();
}
