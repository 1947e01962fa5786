#include <gtest/gtest.h>

#include <cmath>

#include "biounet/ops.hpp"
#include "biounet/random.hpp"
#include "oracles.hpp"

namespace biounet {
namespace {

Tensor<double> random_tensor(Rng& rng, Shape s) {
  Tensor<double> t(s);
  for (auto& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

TEST(Tensor, CopiesShareStorageAndCloneDoesNot) {
  Tensor<float> a({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor<float> b = a;
  b.data()[0] = 9;
  EXPECT_EQ(a.data()[0], 9);
  Tensor<float> c = a.clone();
  c.data()[1] = -1;
  EXPECT_EQ(a.data()[1], 2);
  EXPECT_FALSE(c.same_storage(a));
}

TEST(Tensor, ParameterCopyIsDeep) {
  Parameter<float> p(Tensor<float>({1, 1, 1, 2}, {1, 2}));
  Parameter<float> q = p;
  q.value.data()[0] = 5;
  EXPECT_EQ(p.value.data()[0], 1);
}

TEST(Tensor, ShapeMismatchOnConstruction) {
  EXPECT_THROW(Tensor<float>({1, 1, 2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
}

TEST(Tape, SecondBackwardIsAStateError) {
  Tape<double> tape;
  Tensor<double> x({1, 1, 1, 1}, {2.0}, true);
  auto y = ops::square<double>(tape, x);
  tape.backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  EXPECT_THROW(tape.backward(y), StateError);
}

TEST(Tape, NonScalarLossIsAContractError) {
  Tape<double> tape;
  Tensor<double> x({1, 2, 1, 1}, {1.0, 2.0}, true);
  auto y = ops::square<double>(tape, x);
  EXPECT_THROW(tape.backward(y), ContractError);
}

TEST(Tape, InputsWithoutRequiresGradAreNeverWritten) {
  Tape<double> tape;
  Tensor<double> x({1, 1, 1, 2}, {1.0, 2.0}, true);
  Tensor<double> c({1, 1, 1, 2}, {3.0, 4.0}, false);
  tape.backward(ops::sum<double>(tape, ops::add<double>(tape, x, c)));
  EXPECT_FALSE(c.has_grad());
  EXPECT_DOUBLE_EQ(x.grad()[1], 1.0);
}

struct ConvCase {
  std::size_t kh, stride, pad;
};

class ConvForward : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvForward, MatchesDirectLoops) {
  const auto p = GetParam();
  Rng rng(11);
  auto x = random_tensor(rng, {2, 3, 7, 6});
  auto k = random_tensor(rng, {4, 3, p.kh, p.kh});
  Tape<double> tape;
  auto y = ops::conv2d<double>(tape, x, k, nullptr, {p.stride, p.pad});
  std::vector<double> xv(x.data().begin(), x.data().end()), kv(k.data().begin(), k.data().end());
  auto ref = testing::conv2d_naive(xv, 2, 3, 7, 6, kv, 4, p.kh, p.kh, p.stride, p.pad);
  ASSERT_EQ(y.numel(), ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvForward,
                         ::testing::Values(ConvCase{3, 1, 1}, ConvCase{3, 2, 1}, ConvCase{1, 1, 0}, ConvCase{1, 2, 0},
                                           ConvCase{3, 1, 0}));

TEST(Ops, WindowOutput) {
  EXPECT_EQ(ops::window_output(64, 3, 2, 1), 32u);
  EXPECT_EQ(ops::window_output(5, 3, 1, 1), 5u);
}

TEST(Ops, MaxAndAveragePooling) {
  Tensor<double> x({1, 1, 2, 4}, {1, 5, 2, 0, 3, 4, -1, 7});
  Tape<double> tape;
  auto m = ops::pool2d<double>(tape, x, ops::PoolKind::max);
  auto a = ops::pool2d<double>(tape, x, ops::PoolKind::avg);
  auto g = ops::pool2d<double>(tape, x, ops::PoolKind::global_avg);
  EXPECT_EQ(m.data()[0], 5);
  EXPECT_EQ(m.data()[1], 7);
  EXPECT_DOUBLE_EQ(a.data()[0], 13.0 / 4);
  EXPECT_DOUBLE_EQ(g.item(), 21.0 / 8);
}

TEST(Ops, BatchNormTrainNormalizesAndUpdatesRunningStats) {
  Rng rng(3);
  auto x = random_tensor(rng, {4, 2, 3, 3});
  Tensor<double> g = Tensor<double>::full({1, 2, 1, 1}, 1.0), b = Tensor<double>::zeros({1, 2, 1, 1});
  ops::NormStats<double> stats;
  Tape<double> tape;
  auto y = ops::batch_norm2d<double>(tape, x, g, b, ops::NormMode::train, stats);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0, v = 0, xm = 0, xv = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 9; ++i) {
        m += y.data()[(n * 2 + c) * 9 + i];
        xm += x.data()[(n * 2 + c) * 9 + i];
      }
    m /= 36;
    xm /= 36;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 9; ++i) {
        v += std::pow(y.data()[(n * 2 + c) * 9 + i] - m, 2);
        xv += std::pow(x.data()[(n * 2 + c) * 9 + i] - xm, 2);
      }
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 36, 1.0, 1e-3);
    ASSERT_TRUE(stats.initialized);
    // First update from identity statistics with momentum 0.1, unbiased variance.
    EXPECT_NEAR(stats.mean[c], 0.1 * xm, 1e-12);
    EXPECT_NEAR(stats.var[c], 0.9 + 0.1 * xv / 35, 1e-12);
  }
}

TEST(Ops, BatchNormEvalWithoutStatisticsIsAStateError) {
  Tensor<double> x({1, 1, 1, 1}, std::vector<double>{1.0});
  Tensor<double> g = Tensor<double>::full({1, 1, 1, 1}, 1.0), b = Tensor<double>::zeros({1, 1, 1, 1});
  ops::NormStats<double> stats;
  Tape<double> tape;
  EXPECT_THROW(ops::batch_norm2d<double>(tape, x, g, b, ops::NormMode::eval, stats), StateError);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  Rng rng(5);
  auto x = random_tensor(rng, {2, 5, 1, 3});
  for (auto& v : x.data()) v *= 50;
  Tape<double> tape;
  auto y = ops::softmax<double>(tape, x);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t p = 0; p < 3; ++p) {
      double s = 0;
      for (std::size_t c = 0; c < 5; ++c) s += y.at(n, c, 0, p);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Ops, UpsampleNearestRepeatsPixels) {
  Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
  Tape<double> tape;
  auto y = ops::upsample_nearest<double>(tape, x, 4, 4);
  EXPECT_EQ(y.at(0, 0, 1, 1), 1);
  EXPECT_EQ(y.at(0, 0, 0, 3), 2);
  EXPECT_EQ(y.at(0, 0, 3, 0), 3);
  EXPECT_EQ(y.at(0, 0, 2, 2), 4);
}

TEST(Ops, ConcatChannelsOrder) {
  Tensor<double> a({1, 1, 1, 2}, {1, 2}), b({1, 2, 1, 2}, {3, 4, 5, 6});
  Tape<double> tape;
  auto y = ops::concat_channels<double>(tape, {a, b});
  EXPECT_EQ(y.shape(), (Shape{1, 3, 1, 2}));
  EXPECT_EQ(y.data()[0], 1);
  EXPECT_EQ(y.data()[5], 6);
}

TEST(Ops, ShapeErrors) {
  Tape<double> tape;
  Tensor<double> x({1, 2, 4, 4}), k({3, 3, 3, 3});
  EXPECT_THROW(ops::conv2d<double>(tape, x, k, nullptr), DimensionError);
  Tensor<double> a({1, 1, 2, 2}), b({1, 1, 2, 3});
  EXPECT_THROW(ops::add<double>(tape, a, b), DimensionError);
}

TEST(Ops, BilinearResizeKeepsConstantsAndIdentity) {
  std::vector<double> plane(9, 0.25);
  auto up = ops::resize_bilinear<double>(plane, 3, 3, 7, 5);
  for (double v : up) EXPECT_NEAR(v, 0.25, 1e-15);
  std::vector<double> ramp{0, 1, 2, 3};
  auto same = ops::resize_bilinear<double>(ramp, 2, 2, 2, 2);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(same[i], ramp[i]);
}

TEST(Random, DerivedStreamsAreReproducibleAndDistinct) {
  auto a = Rng::derive(1, {2, 3}), b = Rng::derive(1, {2, 3}), c = Rng::derive(1, {3, 2});
  const auto x = a.next();
  EXPECT_EQ(x, b.next());
  EXPECT_NE(x, c.next());
}

}  // namespace
}  // namespace biounet
