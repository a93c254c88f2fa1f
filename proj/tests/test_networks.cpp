#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ufogen/networks.hpp"

using namespace ufogen;

namespace {

Architecture small_arch(bool takes_xt = false) {
  Architecture a;
  a.generator_hidden = {16, 16};
  a.discriminator_hidden = {12};
  a.time_embedding_dim = 8;
  a.discriminator_takes_xt = takes_xt;
  return a;
}

}  // namespace

TEST(TimeEmbedding, ShapeAndZeroIndex) {
  TimeEmbedding e(64, 1000);
  std::vector<int> t{0, 500, 1000};
  auto x = e.embed(t);
  EXPECT_EQ(x.shape(), (Shape{3, 64}));
  for (std::size_t k = 0; k < 32; ++k) {
    EXPECT_EQ(x(0, k), 0.0);
    EXPECT_EQ(x(0, 32 + k), 1.0);
  }
  // sin^2 + cos^2 = 1 per frequency
  for (std::size_t k = 0; k < 32; ++k) {
    EXPECT_NEAR(x(1, k) * x(1, k) + x(1, 32 + k) * x(1, 32 + k), 1.0, 1e-14);
  }
}

TEST(TimeEmbedding, DistinctIndicesGiveDistinctRows) {
  TimeEmbedding e(64, 1000);
  std::vector<int> t{249, 250};
  auto x = e.embed(t);
  double diff = 0;
  for (std::size_t k = 0; k < 64; ++k) diff += std::abs(x(0, k) - x(1, k));
  EXPECT_GT(diff, 1e-3);
}

TEST(TimeEmbedding, Errors) {
  EXPECT_THROW(TimeEmbedding(7, 10), ConfigError);
  EXPECT_THROW(TimeEmbedding(0, 10), ConfigError);
  EXPECT_THROW(TimeEmbedding(8, 0), ConfigError);
  TimeEmbedding e(8, 10);
  std::vector<int> bad{11};
  EXPECT_THROW(e.embed(bad), IndexError);
  std::vector<int> neg{-1};
  EXPECT_THROW(e.embed(neg), IndexError);
}

TEST(ModelPair, DefaultShapes) {
  ModelPair m(Architecture{}, 1000, 0);
  const auto& g = m.generator().params;
  ASSERT_EQ(g.size(), 10u);
  EXPECT_EQ(g[0].shape(), (Shape{66, 256}));
  EXPECT_EQ(g[8].shape(), (Shape{256, 2}));
  EXPECT_EQ(g[9].shape(), (Shape{1, 2}));
  const auto& d = m.discriminator().params;
  ASSERT_EQ(d.size(), 8u);
  EXPECT_EQ(d[0].shape(), (Shape{66, 256}));
  EXPECT_EQ(d[6].shape(), (Shape{256, 1}));
  Architecture cond;
  cond.discriminator_takes_xt = true;
  ModelPair c(cond, 1000, 0);
  EXPECT_EQ(c.discriminator().params[0].shape(), (Shape{68, 256}));
}

TEST(ModelPair, InitialGeneratorOutputsZero) {
  ModelPair m(small_arch(), 100, 4);
  auto x = Tensor::matrix({{0.5, -1}, {3, 2}});
  auto y = generator_forward(m, x, 100);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(ModelPair, SameSeedSameParameters) {
  ModelPair a(small_arch(), 100, 9), b(small_arch(), 100, 9), c(small_arch(), 100, 10);
  auto na = a.named_tensors(), nb = b.named_tensors(), nc = c.named_tensors();
  ASSERT_EQ(na.size(), nb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    EXPECT_EQ(na[i].first, nb[i].first);
    EXPECT_TRUE(std::equal(na[i].second.data().begin(), na[i].second.data().end(),
                           nb[i].second.data().begin()));
    if (!std::equal(na[i].second.data().begin(), na[i].second.data().end(),
                    nc[i].second.data().begin()))
      any_diff = true;
  }
  EXPECT_TRUE(any_diff);
}

TEST(ModelPair, NamedTensorsOrder) {
  ModelPair m(small_arch(), 10, 0);
  auto names = m.named_tensors();
  ASSERT_EQ(names.size(), 6u + 4u + 6u);
  EXPECT_EQ(names[0].first, "generator.layer0.weight");
  EXPECT_EQ(names[5].first, "generator.layer2.bias");
  EXPECT_EQ(names[6].first, "discriminator.layer0.weight");
  EXPECT_EQ(names[10].first, "ema.layer0.weight");
}

TEST(ModelPair, CloneIsIndependent) {
  ModelPair m(small_arch(), 10, 1);
  ModelPair c = m.clone();
  double before = m.generator().params[0].data()[0];
  c.generator().params[0].mutable_data()[0] += 1.0;
  c.ema_params()[0].mutable_data()[0] += 1.0;
  EXPECT_EQ(m.generator().params[0].data()[0], before);
  EXPECT_EQ(m.ema_params()[0].data()[0], before);
}

TEST(Forward, WidthAndArityErrors) {
  ModelPair m(small_arch(), 10, 0);
  EXPECT_THROW(generator_forward(m, Tensor::zeros({2, 3}), 1), DimensionError);
  EXPECT_THROW(generator_forward(m, Tensor::zeros({2, 2}), 11), IndexError);
  std::vector<int> t{1};
  EXPECT_THROW(generator_forward(m, Tensor::zeros({2, 2}), t), DimensionError);
  EXPECT_THROW(discriminator_forward(m, Tensor::zeros({2, 2}), 1, Tensor::zeros({2, 2})),
               ContractError);
  ModelPair cond(small_arch(true), 10, 0);
  EXPECT_THROW(discriminator_forward(cond, Tensor::zeros({2, 2}), 1), ContractError);
  EXPECT_THROW(discriminator_forward(cond, Tensor::zeros({2, 2}), 1, Tensor::zeros({3, 2})),
               DimensionError);
  auto logits = discriminator_forward(cond, Tensor::zeros({2, 2}), 1, Tensor::zeros({2, 2}));
  EXPECT_EQ(logits.shape(), (Shape{2, 1}));
}

TEST(Forward, MlpMatchesManualComputation) {
  std::mt19937_64 rng(3);
  std::vector<std::size_t> hidden{3};
  Mlp mlp = make_mlp(2, hidden, 1, Activation::kLeakyRelu, 0.2, rng, false);
  auto x = Tensor::matrix({{0.7, -0.4}});
  const auto& W0 = mlp.params[0];
  const auto& b0 = mlp.params[1];
  const auto& W1 = mlp.params[2];
  const auto& b1 = mlp.params[3];
  double out = b1.data()[0];
  for (std::size_t j = 0; j < 3; ++j) {
    double h = b0.data()[j] + 0.7 * W0(0, j) - 0.4 * W0(1, j);
    h = h > 0 ? h : 0.2 * h;
    out += h * W1(j, 0);
  }
  EXPECT_NEAR(mlp.forward(x).item(), out, 1e-15);
}

TEST(Forward, InitializationBounds) {
  std::mt19937_64 rng(3);
  std::vector<std::size_t> hidden{64};
  Mlp mlp = make_mlp(16, hidden, 2, Activation::kSilu, 0.2, rng, true);
  for (double v : mlp.params[0].data()) EXPECT_LE(std::abs(v), 0.25);
  for (double v : mlp.params[2].data()) EXPECT_EQ(v, 0.0);
}

TEST(Ema, UpdateFormula) {
  ModelPair m(small_arch(), 10, 2);
  m.generator().params[0].mutable_data()[0] = 2.0;
  m.ema_params()[0].mutable_data()[0] = 1.0;
  ema_update(m, 0.75);
  EXPECT_DOUBLE_EQ(m.ema_params()[0].data()[0], 0.75 * 1.0 + 0.25 * 2.0);
  ema_update(m, 0.0);
  for (std::size_t i = 0; i < m.ema_params().size(); ++i) {
    auto a = m.ema_params()[i].data(), b = m.generator().params[i].data();
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
  }
  EXPECT_THROW(ema_update(m, 1.0), ConfigError);
  EXPECT_THROW(ema_update(m, -0.1), ConfigError);
}

TEST(Ema, ForwardUsesShadowWeights) {
  ModelPair m(small_arch(), 10, 2);
  m.generator().params.back().mutable_data()[0] = 5.0;
  auto x = Tensor::zeros({1, 2});
  EXPECT_EQ(generator_forward(m, x, 3, false)(0, 0), 5.0);
  EXPECT_EQ(generator_forward(m, x, 3, true)(0, 0), 0.0);
}
