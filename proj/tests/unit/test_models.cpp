#include <gtest/gtest.h>

#include <set>

#include "biounet/checkpoint.hpp"
#include "biounet/losses.hpp"
#include "biounet/models.hpp"

namespace biounet {
namespace {

using nn::ParamGroup;
using ops::NormMode;

nn::ModelConfig small_config(std::size_t width = 1) {
  nn::ModelConfig c;
  c.encoder.stage_widths = {8, 16, 16, 32};
  c.decoder.widths = {8, 8, 4, 4};
  c.classifier_width = width;
  c.projection_dim = 16;
  c.image_size = 32;
  return c;
}

Tensor<float> images(std::size_t n, std::size_t size, std::uint64_t seed, std::size_t channels = 3) {
  Rng rng(seed);
  Tensor<float> x({n, channels, size, size});
  for (auto& v : x.data()) v = static_cast<float>(rng.normal());
  return x;
}

TEST(Model, OutputShapes) {
  nn::BioUNet<float> m(small_config(6), 1);
  Tape<float> tape;
  EXPECT_EQ(m.classify(tape, images(2, 32, 1), NormMode::train).shape(), (Shape{2, 6, 1, 1}));
  EXPECT_EQ(m.project(tape, images(2, 32, 2), NormMode::train).shape(), (Shape{2, 16, 1, 1}));
  EXPECT_EQ(m.segment(tape, images(2, 32, 3, 12), NormMode::train).shape(), (Shape{2, 1, 32, 32}));
}

TEST(Model, DefaultEncoderHasTwelveBlocksAndFourStages) {
  nn::Encoder<float> e(nn::EncoderConfig{}, 3);
  EXPECT_EQ(e.block_count(), 12u);
  Tape<float> tape;
  auto out = e.forward(tape, images(1, 64, 4), NormMode::train, nn::Domain::image);
  EXPECT_EQ(out.features.shape(), (Shape{1, 128, 4, 4}));
  EXPECT_EQ(out.blocks[0].shape(), (Shape{1, 16, 32, 32}));
  EXPECT_EQ(out.blocks[11].shape(), (Shape{1, 128, 4, 4}));
  EXPECT_EQ(out.skips[0].shape().h, 64u);
}

TEST(Model, SegmentationOutputIsAProbabilityMap) {
  nn::BioUNet<float> m(small_config(), 5);
  Tape<float> tape;
  auto y = m.segment(tape, images(2, 32, 6, 12), NormMode::train);
  for (float v : y.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Model, RejectsIncompatibleInputs) {
  nn::BioUNet<float> m(small_config(), 1);
  Tape<float> tape;
  EXPECT_THROW(m.classify(tape, images(1, 24, 1), NormMode::train), DimensionError);
  EXPECT_THROW(m.segment(tape, images(1, 32, 1, 3), NormMode::train), DimensionError);
}

TEST(Model, ParameterGroupsPartitionTheModel) {
  nn::BioUNet<float> m(small_config(), 2);
  std::set<const Parameter<float>*> seen;
  std::size_t total = 0;
  for (auto g : nn::kAllGroups) {
    for (const auto& ref : m.parameters(g)) {
      EXPECT_TRUE(seen.insert(ref.param).second) << ref.name;
      ++total;
    }
  }
  EXPECT_EQ(total, m.parameters().size());
  for (const auto& ref : m.parameters(ParamGroup::decoder)) {
    EXPECT_EQ(ref.name.rfind("decoder.", 0), 0u) << ref.name;
  }
  bool adapter = false;
  for (const auto& ref : m.parameters(ParamGroup::decoder)) adapter |= ref.name.find("adapter") != std::string::npos;
  EXPECT_TRUE(adapter);
}

TEST(Model, SameSeedSameWeights) {
  nn::BioUNet<float> a(small_config(), 9), b(small_config(), 9), c(small_config(), 10);
  for (auto g : nn::kAllGroups) EXPECT_EQ(nn::group_hash(a, g), nn::group_hash(b, g));
  EXPECT_NE(nn::group_hash(a, ParamGroup::encoder), nn::group_hash(c, ParamGroup::encoder));
}

TEST(Model, EveryLossReachesEveryEncoderParameter) {
  nn::BioUNet<float> m(small_config(2), 4);
  auto finite_nonzero = [&](const char* what) {
    for (auto& ref : m.parameters(ParamGroup::encoder)) {
      ASSERT_TRUE(ref.param->value.has_grad()) << what << " " << ref.name;
      double s = 0;
      for (float g : ref.param->value.grad()) {
        ASSERT_TRUE(std::isfinite(g)) << what << " " << ref.name;
        s += std::abs(g);
      }
      EXPECT_GT(s, 0.0) << what << " " << ref.name;
    }
    m.zero_grad();
  };
  {
    Tape<float> tape;
    std::vector<float> t{1, 0, 0, 1, 1, 1};
    auto l = loss::bce<float>(tape, m.classify(tape, images(3, 32, 1), NormMode::train), t);
    tape.backward(l.value);
    finite_nonzero("bce");
  }
  {
    Tape<float> tape;
    std::vector<float> t(2 * 32 * 32, 0.0f);
    for (std::size_t i = 0; i < t.size(); i += 3) t[i] = 1.0f;
    auto l = loss::soft_dice<float>(tape, m.segment(tape, images(2, 32, 2, 12), NormMode::train), t);
    tape.backward(l.value);
    finite_nonzero("soft dice");
  }
  {
    Tape<float> tape;
    auto l = loss::nt_xent<float>(tape, m.project(tape, images(4, 32, 3), NormMode::train), 0.5f);
    tape.backward(l.value);
    finite_nonzero("nt-xent");
  }
}

TEST(Model, ImageAndHeatmapDomainsKeepSeparateStatistics) {
  nn::BioUNet<float> m(small_config(), 4);
  auto snapshot = [&](std::size_t d) {
    std::vector<float> v;
    for (auto& ref : m.norms()) v.insert(v.end(), (*ref.stats)[d].mean.begin(), (*ref.stats)[d].mean.end());
    return v;
  };
  Tape<float> t1;
  m.classify(t1, images(2, 32, 1), NormMode::train);
  const auto heat_before = snapshot(1);
  Tape<float> t2;
  m.classify(t2, images(2, 32, 2), NormMode::train);
  EXPECT_EQ(snapshot(1), heat_before);
}

TEST(Model, BlockLocality) {
  nn::BioUNet<float> m(small_config(), 7);
  auto x = images(1, 32, 8);
  Tape<float> t1;
  auto before = m.encoder().forward(t1, x, NormMode::train, nn::Domain::image);
  const std::vector<float> block5(before.blocks[4].data().begin(), before.blocks[4].data().end());
  // Perturb every parameter of deeper blocks.
  std::vector<nn::ParamRef<float>> deep;
  for (std::size_t b = 5; b < 12; ++b) m.encoder().block(b).collect(deep, "x.");
  for (auto& ref : deep)
    for (auto& v : ref.param->value.data()) v += 0.5f;
  Tape<float> t2;
  auto after = m.encoder().forward(t2, x, NormMode::train, nn::Domain::image);
  const std::vector<float> again(after.blocks[4].data().begin(), after.blocks[4].data().end());
  EXPECT_EQ(block5, again);
}

TEST(Model, E3CloneSharesNoStorage) {
  nn::BioUNet<float> m(small_config(), 3);
  const Checkpoint ck = capture(m);
  auto e3 = clone_to_e3(m.encoder(), ck);
  std::vector<nn::ParamRef<float>> mine, theirs;
  m.encoder().collect(mine);
  e3.encoder.collect(theirs);
  ASSERT_EQ(mine.size(), theirs.size());
  for (std::size_t i = 0; i < mine.size(); ++i) {
    EXPECT_FALSE(mine[i].param->value.same_storage(theirs[i].param->value));
    EXPECT_EQ(std::vector<float>(mine[i].param->value.data().begin(), mine[i].param->value.data().end()),
              std::vector<float>(theirs[i].param->value.data().begin(), theirs[i].param->value.data().end()));
  }
  // Mutating E1 leaves E3 untouched and vice versa.
  const float e3_value = theirs[0].param->value.data()[0];
  mine[0].param->value.data()[0] += 1.0f;
  EXPECT_EQ(theirs[0].param->value.data()[0], e3_value);
  EXPECT_FALSE(theirs[0].param->value.requires_grad());
}

}  // namespace
}  // namespace biounet
