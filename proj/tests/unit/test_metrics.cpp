#include <gtest/gtest.h>

#include "biounet/errors.hpp"
#include "biounet/metrics.hpp"
#include "biounet/random.hpp"
#include "oracles.hpp"

namespace biounet {
namespace {

TEST(ContinuousDice, EqualsBinaryDiceForBinaryPredictions) {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 16 + rng.below(200);
    std::vector<float> a(n), b(n);
    for (auto& v : a) v = rng.bernoulli(0.3) ? 1.0f : 0.0f;
    for (auto& v : b) v = rng.bernoulli(0.4) ? 1.0f : 0.0f;
    if (trial == 0) std::fill(a.begin(), a.end(), 0.0f);
    const double cdc = metrics::continuous_dice(a, b);
    EXPECT_EQ(cdc, testing::binary_dice_reference(a, b)) << "trial " << trial;
    EXPECT_EQ(cdc, metrics::binary_dice(a, b));
  }
}

TEST(ContinuousDice, HandCase) {
  const std::vector<float> a{1, 1, 0, 0}, b{0.6f, 0.4f, 0.2f, 0.0f};
  EXPECT_NEAR(metrics::continuous_dice(a, b), 0.9091, 1e-4);
  EXPECT_NEAR(metrics::continuous_dice(a, b), 2.0 / 2.2, 1e-6);
}

TEST(ContinuousDice, EmptyCases) {
  const std::vector<float> zero(4, 0.0f), some{0, 0.5f, 0, 0};
  EXPECT_EQ(metrics::continuous_dice(zero, zero), 1.0);
  EXPECT_EQ(metrics::continuous_dice(zero, some), 0.0);
  EXPECT_EQ(metrics::continuous_dice(std::vector<float>{1, 1, 0, 0}, zero), 0.0);
}

TEST(ContinuousDice, PerfectPrediction) {
  const std::vector<float> a{1, 0, 1, 1};
  EXPECT_DOUBLE_EQ(metrics::continuous_dice(a, a), 1.0);
}

TEST(ContinuousDice, InUnitInterval) {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    std::vector<float> a(64), b(64);
    for (auto& v : a) v = rng.bernoulli(0.3) ? 1.0f : 0.0f;
    for (auto& v : b) v = static_cast<float>(rng.uniform());
    const double c = metrics::continuous_dice(a, b);
    EXPECT_GE(c, 0.0);
    EXPECT_LE(c, 1.0);
  }
}

TEST(Auc, MatchesPairCounting) {
  Rng rng(5);
  for (int t = 0; t < 30; ++t) {
    std::vector<double> s(40);
    std::vector<int> y(40);
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = std::round(rng.uniform() * 10) / 10;  // forces ties
      y[i] = rng.bernoulli(0.4);
    }
    y[0] = 1;
    y[1] = 0;
    EXPECT_NEAR(metrics::auc(s, y), testing::auc_pairs(s, y), 1e-12);
  }
}

TEST(Auc, SingleClassIsUndefined) {
  std::vector<double> s{0.1, 0.2};
  std::vector<int> y{1, 1};
  EXPECT_THROW(metrics::auc(s, y), ContractError);
  const auto m = metrics::classification_metrics(s, y);
  EXPECT_FALSE(m.auc.has_value());
  EXPECT_DOUBLE_EQ(m.accuracy, 0.0);
}

TEST(Classification, AccuracyAtHalf) {
  std::vector<double> s{0.9, 0.2, 0.6, 0.4};
  std::vector<int> y{1, 0, 0, 0};
  const auto m = metrics::classification_metrics(s, y);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.75);
  EXPECT_DOUBLE_EQ(*m.auc, 1.0);
}

}  // namespace
}  // namespace biounet
