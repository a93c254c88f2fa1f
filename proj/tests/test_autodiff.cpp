#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ufogen/autodiff.hpp"

using namespace ufogen;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng,
                     bool grad = false) {
  std::normal_distribution<double> n;
  std::vector<double> v(r * c);
  for (auto& x : v) x = n(rng);
  return Tensor::from({r, c}, v, grad);
}

}  // namespace

TEST(Tensor, ConstructionAndShape) {
  auto t = Tensor::zeros({3, 4});
  EXPECT_EQ(t.size(), 12u);
  EXPECT_EQ(t.rows(), 3u);
  EXPECT_EQ(t.cols(), 4u);
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  EXPECT_DOUBLE_EQ(Tensor::scalar(2.5).item(), 2.5);
  EXPECT_THROW(Tensor::zeros({2}).item(), ContractError);
}

TEST(Tensor, DetachAndCloneDoNotShareStorage) {
  auto a = Tensor::matrix({{1, 2}}, true);
  auto d = a.detach();
  auto c = a.clone();
  d.mutable_data()[0] = 9;
  c.mutable_data()[1] = 7;
  EXPECT_EQ(a(0, 0), 1);
  EXPECT_EQ(a(0, 1), 2);
  EXPECT_FALSE(d.requires_grad());
  EXPECT_TRUE(c.requires_grad());
}

TEST(Matmul, IdentityAndScalarCases) {
  auto a = Tensor::matrix({{1, 2}, {3, 4}});
  auto i = Tensor::matrix({{1, 0}, {0, 1}});
  auto p = matmul(a, i);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(p.data()[k], a.data()[k]);
  EXPECT_DOUBLE_EQ(matmul(Tensor::matrix({{3}}), Tensor::matrix({{-2}})).item(), -6);
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
  EXPECT_THROW(matmul(Tensor::zeros({3}), Tensor::zeros({3, 1})), DimensionError);
}

TEST(Matmul, GradientOfSumIsRowSumsOfB) {
  std::mt19937_64 rng(3);
  auto a = random_matrix(3, 4, rng, true);
  auto b = random_matrix(4, 5, rng);
  backward(sum(matmul(a, b)));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      double expect = 0;
      for (std::size_t j = 0; j < 5; ++j) expect += b(k, j);
      EXPECT_NEAR(a.grad()[i * 4 + k], expect, 1e-12);
    }
  }
}

TEST(Matmul, AgreesWithFiniteDifferences) {
  std::mt19937_64 rng(5);
  auto b = random_matrix(4, 3, rng);
  auto w = random_matrix(2, 3, rng);
  auto a = random_matrix(2, 4, rng);
  double err = finite_difference_check(
      [&](const Tensor& x) { return sum(mul(matmul(x, b), w)); }, a);
  EXPECT_LT(err, 1e-6);
}

TEST(Activations, KnownValues) {
  EXPECT_DOUBLE_EQ(sigmoid(Tensor::scalar(0)).item(), 0.5);
  EXPECT_NEAR(softplus(Tensor::scalar(0)).item(), std::log(2.0), 1e-15);
  EXPECT_DOUBLE_EQ(silu(Tensor::scalar(0)).item(), 0.0);
  EXPECT_DOUBLE_EQ(leaky_relu(Tensor::scalar(-2), 0.2).item(), -0.4);
  EXPECT_DOUBLE_EQ(leaky_relu(Tensor::scalar(3), 0.2).item(), 3.0);
  EXPECT_DOUBLE_EQ(tanh(Tensor::scalar(0)).item(), 0.0);
}

TEST(Activations, SigmoidDerivativeAtZero) {
  auto x = Tensor::scalar(0, true);
  backward(sigmoid(x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.25);
}

TEST(Activations, SoftplusIsStableForLargeInputs) {
  auto big = softplus(Tensor::from({2}, {800.0, -800.0}));
  EXPECT_DOUBLE_EQ(big.data()[0], 800.0);
  EXPECT_GE(big.data()[1], 0.0);
  EXPECT_LT(big.data()[1], 1e-300);
  auto x = Tensor::from({2}, {800.0, -800.0}, true);
  backward(sum(softplus(x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
  EXPECT_TRUE(std::isfinite(x.grad()[1]));
}

TEST(Activations, SiluMatchesFiniteDifferences) {
  for (double v : {-2.0, 0.0, 3.0}) {
    double err = finite_difference_check(
        [](const Tensor& x) { return sum(silu(x)); }, Tensor::scalar(v));
    EXPECT_LT(err, 1e-7) << v;
  }
}

TEST(Activations, AllOpsMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  auto x = random_matrix(3, 4, rng);
  auto w = random_matrix(3, 4, rng);
  std::vector<std::function<Tensor(const Tensor&)>> ops = {
      [](const Tensor& t) { return sigmoid(t); },
      [](const Tensor& t) { return softplus(t); },
      [](const Tensor& t) { return tanh(t); },
      [](const Tensor& t) { return silu(t); },
      [](const Tensor& t) { return square(t); },
      [](const Tensor& t) { return neg(t); },
      [](const Tensor& t) { return scale(t, -1.7); },
      [](const Tensor& t) { return add_scalar(t, 0.3); },
  };
  for (std::size_t k = 0; k < ops.size(); ++k) {
    double err = finite_difference_check(
        [&](const Tensor& t) { return sum(mul(ops[k](t), w)); }, x);
    EXPECT_LT(err, 1e-6) << "op " << k;
  }
}

TEST(Broadcast, RowAndColumnVectors) {
  auto m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  auto row = Tensor::matrix({{10, 20, 30}});
  auto col = Tensor::matrix({{100}, {200}});
  auto r = add(m, row);
  EXPECT_EQ(r(1, 2), 36);
  auto c = mul(m, col);
  EXPECT_EQ(c(1, 0), 800);
  auto v = add(m, Tensor::from({3}, {1, 1, 1}));
  EXPECT_EQ(v(0, 0), 2);
}

TEST(Broadcast, GradientsReduceOverBroadcastDims) {
  auto m = Tensor::zeros({4, 3});
  auto row = Tensor::matrix({{1, 2, 3}}, true);
  backward(sum(add(m, row)));
  for (double g : row.grad()) EXPECT_DOUBLE_EQ(g, 4.0);
}

TEST(Broadcast, IncompatibleShapesThrow) {
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
  EXPECT_THROW(mul(Tensor::zeros({2, 3}), Tensor::zeros({2})), DimensionError);
}

TEST(ConcatCols, ValuesAndErrors) {
  auto c = concat_cols({Tensor::matrix({{1}, {2}}), Tensor::matrix({{3, 4}, {5, 6}})});
  EXPECT_EQ(c.cols(), 3u);
  EXPECT_EQ(c(1, 2), 6);
  EXPECT_THROW(concat_cols({Tensor::zeros({2, 1}), Tensor::zeros({3, 1})}), DimensionError);
}

TEST(Reductions, SquaredNormAndGradient) {
  auto x = Tensor::from({2}, {3, 4}, true);
  auto n = squared_l2_norm(x);
  EXPECT_DOUBLE_EQ(n.item(), 25.0);
  backward(n);
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 8.0);
}

TEST(Reductions, AxisKeepsDimension) {
  auto m = Tensor::matrix({{1, 2}, {3, 4}});
  auto s0 = sum(m, 0);
  EXPECT_EQ(s0.shape(), (Shape{1, 2}));
  EXPECT_EQ(s0(0, 1), 6);
  auto s1 = mean(m, 1);
  EXPECT_EQ(s1.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(s1(1, 0), 3.5);
  EXPECT_THROW(sum(m, 2), DimensionError);
  EXPECT_DOUBLE_EQ(mean(Tensor::full({5, 2}, 1.25)).item(), 1.25);
}

TEST(Backward, RequiresScalarWithGraph) {
  auto x = Tensor::from({2}, {1, 2}, true);
  EXPECT_THROW(backward(square(x)), ContractError);
  EXPECT_THROW(backward(Tensor::scalar(1.0)), ContractError);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  // f = x*x + x, df/dx = 2x + 1
  auto x = Tensor::scalar(1.5, true);
  backward(add(mul(x, x), x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
}

TEST(Backward, TapeOrderIsStrictlyDecreasingAndUnique) {
  std::mt19937_64 rng(1);
  auto w = random_matrix(3, 3, rng, true);
  auto x = random_matrix(4, 3, rng);
  auto h = silu(matmul(x, w));
  auto loss = sum(add(h, square(h)));
  auto tape = Tape::record(loss);
  auto order = tape.order();
  ASSERT_FALSE(order.empty());
  for (std::size_t i = 1; i < order.size(); ++i) EXPECT_GT(order[i - 1], order[i]);
}

TEST(Backward, GraphIsReleasedAfterBackward) {
  auto x = Tensor::scalar(2.0, true);
  auto y = square(x);
  auto loss = sum(y);
  EXPECT_TRUE(loss.has_grad_fn());
  backward(loss);
  EXPECT_FALSE(loss.has_grad_fn());
  EXPECT_FALSE(y.has_grad_fn());
}

TEST(Backward, GradientIsLinear) {
  std::mt19937_64 rng(9);
  auto x0 = random_matrix(2, 3, rng);
  auto grad_of = [&](double a, double b) {
    auto x = x0.clone();
    x.set_requires_grad(true);
    auto f = sum(sigmoid(x));
    auto g = sum(square(x));
    backward(add(scale(f, a), scale(g, b)));
    return std::vector<double>(x.grad().begin(), x.grad().end());
  };
  auto gf = grad_of(1, 0), gg = grad_of(0, 1), gc = grad_of(2.5, -0.75);
  for (std::size_t i = 0; i < gc.size(); ++i) {
    EXPECT_NEAR(gc[i], 2.5 * gf[i] - 0.75 * gg[i], 1e-14);
  }
}

TEST(Backward, DeterministicAcrossRuns) {
  auto run = [] {
    std::mt19937_64 rng(21);
    auto w = random_matrix(3, 5, rng, true);
    auto x = random_matrix(7, 3, rng);
    backward(mean(softplus(matmul(x, w))));
    return std::vector<double>(w.grad().begin(), w.grad().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(NoGrad, GuardDisablesRecording) {
  auto x = Tensor::scalar(1.0, true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    auto y = square(x);
    EXPECT_FALSE(y.has_grad_fn());
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE(square(x).has_grad_fn());
}

TEST(FiniteDifference, QuadraticAndConstant) {
  EXPECT_LT(finite_difference_check([](const Tensor& x) { return square(x); },
                                    Tensor::scalar(3.0)),
            1e-7);
  EXPECT_EQ(finite_difference_check(
                [](const Tensor&) { return Tensor::scalar(4.0); }, Tensor::scalar(1.0)),
            0.0);
}

TEST(FiniteDifference, DetectsWrongGradient) {
  // A hand-built op whose backward is off by a factor of two.
  auto bad = [](const Tensor& x) {
    auto y = make_result(x.shape(), {x.data()[0] * x.data()[0]}, {x.node()},
                         [](detail::Node& self) {
                           auto& g = self.parents[0]->ensure_grad();
                           g[0] += 4.0 * self.parents[0]->data[0] * self.grad[0];
                         });
    return y;
  };
  EXPECT_NEAR(finite_difference_check(bad, Tensor::scalar(2.0)), 0.5, 1e-6);
}
