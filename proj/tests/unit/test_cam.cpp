#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "biounet/cam.hpp"
#include "biounet/ops.hpp"

namespace biounet {
namespace {

using ops::NormMode;

// Toy model: a single 1x1 convolution channel, global average pooling and
// a linear score c * GAP(A).
struct Toy {
  Tensor<double> activation, gradient;
};

Toy toy(const Tensor<double>& x, const Tensor<double>& kernel, double c) {
  Tape<double> tape;
  Tensor<double> k = kernel.clone();
  k.set_requires_grad(true);
  Tensor<double> a = ops::conv2d<double>(tape, x, k, nullptr);
  Tensor<double> score = ops::scale<double>(tape, ops::sum<double>(tape, ops::pool2d<double>(tape, a, ops::PoolKind::global_avg)), c);
  tape.backward(score);
  std::vector<double> g(a.grad().begin(), a.grad().end());
  return {a, Tensor<double>(a.shape(), g)};
}

std::vector<double> normalized_relu(const Tensor<double>& a) {
  std::vector<double> r(a.data().begin(), a.data().end());
  for (auto& v : r) v = std::max(v, 0.0);
  const auto [lo, hi] = std::minmax_element(r.begin(), r.end());
  const double mn = *lo, mx = *hi;
  for (auto& v : r) v = (v - mn) / (mx - mn);
  return r;
}

Tensor<double> toy_input(std::uint64_t seed, bool nonnegative) {
  Rng rng(seed);
  Tensor<double> x({1, 3, 6, 5});
  for (auto& v : x.data()) v = nonnegative ? rng.uniform(0.0, 1.0) : rng.uniform(-1.0, 1.0);
  return x;
}

const Tensor<double> kPositiveKernel({1, 3, 1, 1}, {0.7, 0.2, 1.1});

class ToyModel : public ::testing::TestWithParam<CamMethod> {};

TEST_P(ToyModel, EqualsAnalyticNormalizedActivation) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Toy t = toy(toy_input(seed, true), kPositiveKernel, 1.0);
    const auto expected = normalized_relu(t.activation);
    const cam::Heatmap h = cam::from_activation(GetParam(), t.activation, t.gradient, 0, 6, 5);
    ASSERT_EQ(h.values.size(), expected.size());
    EXPECT_FALSE(h.degenerate);
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(h.values[i], expected[i], 1e-6);
  }
}

TEST_P(ToyModel, PositiveScoreRescalingLeavesMapUnchanged) {
  const auto x = toy_input(3, true);
  const Toy base = toy(x, kPositiveKernel, 1.0);
  const cam::Heatmap h0 = cam::from_activation(GetParam(), base.activation, base.gradient, 0, 6, 5);
  for (double c : {1e-3, 0.5, 7.0, 250.0}) {
    const Toy t = toy(x, kPositiveKernel, c);
    const cam::Heatmap h = cam::from_activation(GetParam(), t.activation, t.gradient, 0, 6, 5);
    for (std::size_t i = 0; i < h.values.size(); ++i) EXPECT_NEAR(h.values[i], h0.values[i], 1e-5) << "c=" << c;
  }
}

TEST_P(ToyModel, ZeroActivationsGiveADegenerateZeroMap) {
  Tensor<double> x({1, 3, 6, 5});
  const Toy t = toy(x, kPositiveKernel, 1.0);
  const cam::Heatmap h = cam::from_activation(GetParam(), t.activation, t.gradient, 0, 6, 5);
  EXPECT_TRUE(h.degenerate);
  for (float v : h.values) EXPECT_EQ(v, 0.0f);
}

TEST_P(ToyModel, ValuesStayInUnitIntervalAfterResize) {
  const Toy t = toy(toy_input(9, false), kPositiveKernel, 1.0);
  const cam::Heatmap h = cam::from_activation(GetParam(), t.activation, t.gradient, 0, 17, 23);
  EXPECT_EQ(h.values.size(), 17u * 23u);
  for (float v : h.values) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_FLOAT_EQ(*std::max_element(h.values.begin(), h.values.end()), 1.0f);
}

INSTANTIATE_TEST_SUITE_P(Methods, ToyModel,
                         ::testing::Values(CamMethod::grad_cam, CamMethod::grad_cam_pp, CamMethod::layer_cam));

TEST(GradCam, MixedSignActivationsKeepOnlyPositiveEvidence) {
  const Toy t = toy(toy_input(4, false), kPositiveKernel, 1.0);
  const auto expected = normalized_relu(t.activation);
  const cam::Heatmap h = cam::from_activation(CamMethod::grad_cam, t.activation, t.gradient, 0, 6, 5);
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(h.values[i], expected[i], 1e-6);
}

TEST(GradCam, NegatedScoreFlipsTheSurvivingRegion) {
  const auto x = toy_input(4, false);
  const Toy pos = toy(x, kPositiveKernel, 1.0);
  const Toy neg = toy(x, kPositiveKernel, -1.0);
  const cam::Heatmap hp = cam::from_activation(CamMethod::grad_cam, pos.activation, pos.gradient, 0, 6, 5);
  const cam::Heatmap hn = cam::from_activation(CamMethod::grad_cam, neg.activation, neg.gradient, 0, 6, 5);
  for (std::size_t i = 0; i < hp.values.size(); ++i) {
    const double a = pos.activation.data()[i];
    if (a < 0) EXPECT_EQ(hp.values[i], 0.0f);
    if (a > 0) EXPECT_EQ(hn.values[i], 0.0f);
  }
}

TEST(RawMap, GradCamPlusPlusMatchesClosedForm) {
  Rng rng(17);
  const std::size_t C = 3, h = 4, w = 3, P = h * w;
  std::vector<double> A(C * P), g(C * P);
  for (auto& v : A) v = rng.uniform(0.0, 2.0);
  for (auto& v : g) v = rng.uniform(-1.0, 1.0);
  g[5] = 0.0;
  const auto raw = cam::raw_map<double>(CamMethod::grad_cam_pp, A, g, C, h, w);
  std::vector<double> expected(P, 0.0);
  for (std::size_t k = 0; k < C; ++k) {
    double sumA = 0;
    for (std::size_t i = 0; i < P; ++i) sumA += A[k * P + i];
    double weight = 0;
    for (std::size_t i = 0; i < P; ++i) {
      const double gi = g[k * P + i];
      const double denom = 2 * gi * gi + sumA * gi * gi * gi;
      const double alpha = denom != 0 ? gi * gi / denom : 0.0;
      weight += alpha * std::max(gi, 0.0);
    }
    for (std::size_t i = 0; i < P; ++i) expected[i] += weight * A[k * P + i];
  }
  for (std::size_t i = 0; i < P; ++i) EXPECT_NEAR(raw[i], std::max(expected[i], 0.0), 1e-12);
}

TEST(RawMap, LayerCamZeroGradientIsZero) {
  std::vector<double> A(2 * 4, 1.0), g(2 * 4, 0.0);
  for (double v : cam::raw_map<double>(CamMethod::layer_cam, A, g, 2, 2, 2)) EXPECT_EQ(v, 0.0);
}

TEST(RawMap, LayerCamEqualsGradCamForSingleChannelPositiveGradients) {
  Rng rng(3);
  std::vector<double> A(9), g(9, 0.2);
  for (auto& v : A) v = rng.uniform(0.0, 1.0);
  const auto lc = cam::finalize(cam::raw_map<double>(CamMethod::layer_cam, A, g, 1, 3, 3), 3, 3, 3, 3);
  const auto gc = cam::finalize(cam::raw_map<double>(CamMethod::grad_cam, A, g, 1, 3, 3), 3, 3, 3, 3);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(lc.values[i], gc.values[i], 1e-6);
}

// ---- real encoder ---------------------------------------------------------

struct Net {
  nn::Encoder<float> encoder;
  nn::ClassifierHead<float> head;
  Tensor<float> x;
};

Net small_net() {
  nn::EncoderConfig ec;
  ec.stage_widths = {8, 16, 16, 32};
  Net n{nn::Encoder<float>(ec, 5), nn::ClassifierHead<float>(32, 2, 6), Tensor<float>({2, 3, 32, 32})};
  Rng rng(7);
  for (auto& v : n.x.data()) v = static_cast<float>(rng.normal());
  // Populate running statistics for eval mode.
  Tape<float> tape;
  n.encoder.forward(tape, n.x, NormMode::train, nn::Domain::image);
  return n;
}

TEST(Stack, ShapeOrderAndRange) {
  Net n = small_net();
  const auto stacks = cam::build_stacks(n.encoder, n.head, n.x, 1, CamMethod::grad_cam);
  ASSERT_EQ(stacks.size(), 2u);
  for (const auto& s : stacks) {
    EXPECT_EQ(s.data.size(), 12u * 32 * 32);
    for (std::size_t k = 1; k <= 12; ++k) {
      const auto b = s.block(k);
      const float mx = *std::max_element(b.begin(), b.end());
      if (s.degenerate[k - 1]) {
        EXPECT_EQ(mx, 0.0f);
      } else {
        EXPECT_FLOAT_EQ(mx, 1.0f);
      }
      for (float v : b) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
      }
    }
  }
  // Channel k comes from block k.
  for (std::size_t k : {1u, 6u, 12u}) {
    const auto maps = cam::grad_cam(n.encoder, n.head, n.x, k, 1);
    for (std::size_t i = 0; i < 2; ++i) {
      const auto b = stacks[i].block(k);
      ASSERT_EQ(maps[i].values.size(), b.size());
      for (std::size_t p = 0; p < b.size(); ++p) EXPECT_NEAR(maps[i].values[p], b[p], 1e-6);
    }
  }
  const auto last = stacks[0].last();
  EXPECT_EQ(last.data(), stacks[0].block(12).data());
}

TEST(Stack, TargetOutsideHeadIsAContractError) {
  Net n = small_net();
  EXPECT_THROW(cam::build_stacks(n.encoder, n.head, n.x, 2, CamMethod::grad_cam), ContractError);
}

class EncoderScale : public ::testing::TestWithParam<CamMethod> {};

TEST_P(EncoderScale, ClassifierWeightRescalingLeavesMapsUnchanged) {
  Net n = small_net();
  const auto base = cam::build_stacks(n.encoder, n.head, n.x, 0, GetParam());
  for (auto& v : n.head.linear().weight.value.data()) v *= 4.0f;
  const auto scaled = cam::build_stacks(n.encoder, n.head, n.x, 0, GetParam());
  for (std::size_t i = 0; i < base.size(); ++i)
    for (std::size_t p = 0; p < base[i].data.size(); ++p) ASSERT_NEAR(base[i].data[p], scaled[i].data[p], 1e-5);
}

// Grad-CAM++'s alpha term mixes powers of the gradient, so it is scale
// invariant only when the score is linear in one channel (see ToyModel).
INSTANTIATE_TEST_SUITE_P(Methods, EncoderScale, ::testing::Values(CamMethod::grad_cam, CamMethod::layer_cam));

TEST(Stack, FileNaming) {
  EXPECT_EQ(cam::heatmap_filename("ISIC_0001", 3, 12, CamMethod::grad_cam), "ISIC_0001_attr3_block12_grad_cam.pgm");
}

}  // namespace
}  // namespace biounet
