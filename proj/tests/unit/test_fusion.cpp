#include <gtest/gtest.h>

#include <cmath>

#include "biounet/errors.hpp"
#include "biounet/fusion.hpp"
#include "biounet/synthetic.hpp"

namespace biounet::fusion {
namespace {

struct Problem {
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
};

// Two Gaussian clouds; `gap` separates their means along the first axis.
Problem clouds(std::size_t n, std::size_t d, double gap, std::uint64_t seed) {
  Rng rng(seed);
  Problem p;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    std::vector<double> r(d);
    for (auto& v : r) v = rng.normal();
    r[0] += y ? gap : -gap;
    p.rows.push_back(r);
    p.labels.push_back(y);
  }
  return p;
}

double accuracy(const LogisticModel& m, const Problem& p) {
  double ok = 0;
  for (std::size_t i = 0; i < p.rows.size(); ++i) ok += (m.predict(p.rows[i]) >= 0.5) == (p.labels[i] == 1);
  return ok / static_cast<double>(p.rows.size());
}

// Gradient of the penalized mean cross-entropy, recomputed from scratch on
// the model's own standardized inputs.
std::vector<double> objective_gradient(const LogisticModel& m, const Problem& p) {
  const std::size_t d = m.inputs();
  std::vector<double> g(d + 1, 0.0);
  for (std::size_t i = 0; i < p.rows.size(); ++i) {
    std::vector<double> z(d);
    double s = m.bias;
    for (std::size_t k = 0; k < d; ++k) {
      z[k] = (p.rows[i][k] - m.mean[k]) / m.scale[k];
      s += m.weights[k] * z[k];
    }
    const double r = 1.0 / (1.0 + std::exp(-s)) - p.labels[i];
    for (std::size_t k = 0; k < d; ++k) g[k] += r * z[k];
    g[d] += r;
  }
  for (auto& v : g) v /= static_cast<double>(p.rows.size());
  for (std::size_t k = 0; k < d; ++k) g[k] += m.l2 * m.weights[k];
  return g;
}

TEST(Logistic, SeparableFeaturesGiveFullTrainingAccuracy) {
  const auto p = clouds(200, 6, 4.0, 1);
  LogisticOptions o;
  o.l2 = 1e-3;
  const auto m = fit_logistic(p.rows, p.labels, o);
  EXPECT_TRUE(m.converged);
  EXPECT_EQ(accuracy(m, p), 1.0);
}

TEST(Logistic, SolutionIsAStationaryPoint) {
  for (double l2 : {1e-3, 1e-1, 1.0}) {
    const auto p = clouds(150, 5, 0.7, 3);
    LogisticOptions o;
    o.l2 = l2;
    const auto m = fit_logistic(p.rows, p.labels, o);
    ASSERT_TRUE(m.converged);
    for (double g : objective_gradient(m, p)) EXPECT_LT(std::abs(g), 1e-8) << "l2 " << l2;
  }
}

TEST(Logistic, HugePenaltyLeavesOnlyThePrior) {
  auto p = clouds(100, 4, 2.0, 5);
  for (std::size_t i = 0; i < 30; ++i) p.labels[2 * i] = 1;  // 80 positives of 100
  LogisticOptions o;
  o.l2 = 1e9;
  const auto m = fit_logistic(p.rows, p.labels, o);
  for (double w : m.weights) EXPECT_NEAR(w, 0.0, 1e-7);
  EXPECT_NEAR(m.bias, std::log(0.8 / 0.2), 1e-6);
  for (const auto& r : p.rows) EXPECT_NEAR(m.predict(r), 0.8, 1e-6);
}

TEST(Logistic, ConstantFeaturesAreHarmless) {
  auto p = clouds(60, 3, 1.0, 8);
  for (auto& r : p.rows) r[2] = 4.0;
  const auto m = fit_logistic(p.rows, p.labels);
  EXPECT_EQ(m.scale[2], 1.0);
  EXPECT_EQ(m.weights[2], 0.0);
  EXPECT_TRUE(m.converged);
}

TEST(Logistic, OutputsLieInUnitInterval) {
  const auto p = clouds(80, 3, 3.0, 2);
  const auto m = fit_logistic(p.rows, p.labels);
  for (const auto& r : p.rows) {
    const double v = m.predict(r);
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Logistic, JsonRoundTrip) {
  const auto p = clouds(40, 3, 1.0, 4);
  const auto m = fit_logistic(p.rows, p.labels);
  const auto back = LogisticModel::from_json(m.to_json());
  for (const auto& r : p.rows) EXPECT_EQ(back.predict(r), m.predict(r));
}

TEST(Logistic, BadInputsAreContractErrors) {
  EXPECT_THROW(fit_logistic({}, {}), ContractError);
  EXPECT_THROW(fit_logistic({{1.0}, {2.0}}, {0}), ContractError);
  EXPECT_THROW(fit_logistic({{1.0}, {2.0, 3.0}}, {0, 1}), DimensionError);
}

// Diagnosis features for a synthetic dataset: encoder e sees the diagnosis
// through noise of strength `noise[e]`.
std::vector<std::vector<std::vector<double>>> encoder_features(const data::Dataset& d,
                                                               const std::array<double, 5>& noise) {
  Rng rng(17);
  std::vector<std::vector<std::vector<double>>> f(5);
  for (std::size_t e = 0; e < 5; ++e)
    for (const auto& s : d.samples) {
      std::vector<double> r(3);
      for (auto& v : r) v = rng.normal() * noise[e];
      r[0] += s.diagnosis;
      f[e].push_back(r);
    }
  return f;
}

TEST(Fusion, SelectsPenaltyOnValidationAndReportsEverySplit) {
  const auto d = data::gen_synthetic(300, 32, 5);
  const auto r = fuse_features(encoder_features(d, {0.4, 3.0, 3.0, 3.0, 3.0}), d);
  EXPECT_EQ(r.feature_width, 3u);
  EXPECT_EQ(r.fused.model.inputs(), 15u);
  ASSERT_EQ(r.single.size(), 5u);
  EXPECT_EQ(r.fused.validation_auc.size(), kDefaultL2Grid.size());
  double best = -1;
  for (double a : r.fused.validation_auc) best = std::max(best, a);
  const auto it = std::find(kDefaultL2Grid.begin(), kDefaultL2Grid.end(), r.fused.model.l2);
  ASSERT_NE(it, kDefaultL2Grid.end());
  EXPECT_EQ(r.fused.validation_auc[static_cast<std::size_t>(it - kDefaultL2Grid.begin())], best);
  ASSERT_TRUE(r.fused.test.auc);
  ASSERT_TRUE(r.single[0].test.auc);
  EXPECT_GT(*r.single[0].test.auc, *r.single[1].test.auc);
  EXPECT_GE(*r.fused.test.auc, *r.single[0].test.auc - 0.05);
}

nn::ModelConfig small_model(std::size_t last_width) {
  nn::ModelConfig c;
  c.encoder.stage_widths = {8, 8, 8, last_width};
  c.decoder.widths = {4, 4, 4, 4};
  c.classifier_width = 1;
  c.projection_dim = 8;
  c.image_size = 32;
  return c;
}

Checkpoint checkpoint_for(const data::Dataset& d, std::size_t last_width, std::uint64_t seed) {
  nn::BioUNet<float> m(small_model(last_width), seed);
  std::vector<const std::vector<float>*> imgs;
  std::vector<std::vector<float>> normalized;
  for (std::size_t i = 0; i < 16; ++i) {
    normalized.push_back(d.samples[i].image);
    data::apply_stats(d.stats, normalized.back());
  }
  for (const auto& v : normalized) imgs.push_back(&v);
  Tape<float> tape;
  m.encoder().forward(tape, data::image_batch<float>(imgs, 32), ops::NormMode::train, nn::Domain::image);
  Checkpoint ck = capture(m);
  ck.meta = {{"normalization", d.stats.to_json()}};
  return ck;
}

TEST(Fusion, PooledFeaturesHaveEncoderWidth) {
  const auto d = data::gen_synthetic(40, 32, 2);
  const auto ck = checkpoint_for(d, 16, 1);
  const auto f = pooled_features(ck, d, {0, 5, 9});
  ASSERT_EQ(f.size(), 3u);
  for (const auto& r : f) EXPECT_EQ(r.size(), 16u);
  // Eval mode: a sample's features do not depend on its batch.
  const auto alone = pooled_features(ck, d, {5})[0];
  for (std::size_t k = 0; k < alone.size(); ++k) EXPECT_NEAR(alone[k], f[1][k], 1e-5 * (1 + std::abs(f[1][k])));
}

TEST(Fusion, CheckpointsMustShareTheEncoderArchitecture) {
  const auto d = data::gen_synthetic(60, 32, 2);
  std::vector<Checkpoint> cks;
  for (std::uint64_t s = 0; s < 4; ++s) cks.push_back(checkpoint_for(d, 16, s));
  EXPECT_THROW(fuse_and_diagnose(cks, d), ContractError);
  cks.push_back(checkpoint_for(d, 8, 9));
  EXPECT_THROW(fuse_and_diagnose(cks, d), CheckpointError);
  cks.back() = checkpoint_for(d, 16, 9);
  const auto r = fuse_and_diagnose(cks, d);
  EXPECT_EQ(r.fused.model.inputs(), 5u * 16u);
  EXPECT_EQ(r.checkpoint_hashes.size(), 5u);
}

}  // namespace
}  // namespace biounet::fusion
