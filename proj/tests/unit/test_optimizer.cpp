#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "biounet/errors.hpp"
#include "biounet/optimizer.hpp"

namespace biounet {
namespace {

struct ScalarAdam {
  double theta, m = 0, v = 0;
  int t = 0;
  void step(double g, const OptimConfig& o) {
    g += o.weight_decay * theta;
    ++t;
    m = o.beta1 * m + (1 - o.beta1) * g;
    v = o.beta2 * v + (1 - o.beta2) * g * g;
    const double mh = m / (1 - std::pow(o.beta1, t)), vh = v / (1 - std::pow(o.beta2, t));
    theta -= o.lr * mh / (std::sqrt(vh) + o.eps);
  }
};

Parameter<double> param(std::vector<double> values) {
  const std::size_t n = values.size();
  return Parameter<double>(Tensor<double>({1, n, 1, 1}, std::move(values), true));
}

TEST(Adam, ZeroGradientWithoutDecayIsAFixedPoint) {
  auto p = param({0.5, -2.0, 3.0});
  OptimConfig o;
  o.weight_decay = 0.0;
  p.value.grad();
  for (int i = 0; i < 5; ++i) adam_step<double>({{"p", &p}}, o);
  EXPECT_EQ(std::vector<double>(p.value.data().begin(), p.value.data().end()), (std::vector<double>{0.5, -2.0, 3.0}));
  EXPECT_EQ(p.step, 5);
}

TEST(Adam, ConstantGradientMovesByLearningRatePerStep) {
  auto p = param({1.0, 1.0});
  OptimConfig o;
  o.weight_decay = 0.0;
  o.lr = 1e-3;
  for (int i = 0; i < 10; ++i) {
    p.value.grad()[0] = 0.3;
    p.value.grad()[1] = -7.0;
    adam_step<double>({{"p", &p}}, o);
  }
  EXPECT_NEAR(p.value.data()[0], 1.0 - 10 * 1e-3, 1e-9);
  EXPECT_NEAR(p.value.data()[1], 1.0 + 10 * 1e-3, 1e-9);
}

TEST(Adam, MatchesScalarReferenceWithDecay) {
  auto p = param({0.8, -0.1, 2.5});
  std::vector<ScalarAdam> ref{{0.8}, {-0.1}, {2.5}};
  OptimConfig o;
  o.lr = 0.01;
  o.weight_decay = 0.05;
  Rng rng(3);
  for (int s = 0; s < 25; ++s) {
    for (std::size_t i = 0; i < 3; ++i) {
      const double g = rng.normal();
      p.value.grad()[i] = g;
      ref[i].step(g, o);
    }
    adam_step<double>({{"p", &p}}, o);
  }
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(p.value.data()[i], ref[i].theta, 1e-12);
}

TEST(Adam, NonFiniteGradientAbortsTheWholeStep) {
  auto a = param({1.0}), b = param({2.0});
  a.value.grad()[0] = 0.5;
  b.value.grad()[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(adam_step<double>({{"a", &a}, {"b", &b}}, OptimConfig{}), NumericError);
  EXPECT_EQ(a.value.data()[0], 1.0);
  EXPECT_EQ(a.step, 0);
  EXPECT_EQ(a.first_moment[0], 0.0);
}

TEST(Adam, ParametersWithoutGradientAreSkipped) {
  auto a = param({1.0}), b = param({2.0});
  a.value.grad()[0] = 0.5;
  adam_step<double>({{"a", &a}, {"b", &b}}, OptimConfig{});
  EXPECT_NE(a.value.data()[0], 1.0);
  EXPECT_EQ(b.value.data()[0], 2.0);
  EXPECT_EQ(b.step, 0);
}

TEST(Adam, GlobalNormClipScalesGradients) {
  auto p = param({0.0, 0.0});
  p.value.grad()[0] = 3.0;
  p.value.grad()[1] = 4.0;
  EXPECT_DOUBLE_EQ(gradient_norm<double>({{"p", &p}}), 5.0);
  OptimConfig o;
  o.grad_clip = 1.0;
  o.weight_decay = 0.0;
  adam_step<double>({{"p", &p}}, o);
  EXPECT_NEAR(p.first_moment[0], 0.1 * 0.6, 1e-12);
  EXPECT_NEAR(p.first_moment[1], 0.1 * 0.8, 1e-12);
}

TEST(Adam, Deterministic) {
  auto run = [] {
    auto p = param({0.3, 0.7});
    Rng rng(9);
    for (int s = 0; s < 10; ++s) {
      for (auto& g : p.value.grad()) g = rng.normal();
      adam_step<double>({{"p", &p}}, OptimConfig{});
    }
    return std::vector<double>(p.value.data().begin(), p.value.data().end());
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
}  // namespace biounet
