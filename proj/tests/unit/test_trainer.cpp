#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "biounet/errors.hpp"
#include "biounet/synthetic.hpp"
#include "biounet/trainer.hpp"

namespace biounet::pipeline {
namespace {

using nn::ParamGroup;

const data::Dataset& labeled() {
  static const data::Dataset d = data::gen_synthetic(80, 32, 31);
  return d;
}

const data::UnlabeledDataset& unlabeled() {
  static const data::UnlabeledDataset d = data::gen_synthetic_unlabeled(40, 32, 31);
  return d;
}

RunConfig small_config() {
  RunConfig c;
  c.seed = 77;
  c.model.encoder.stage_widths = {8, 16, 16, 32};
  c.model.decoder.widths = {8, 8, 4, 4};
  c.model.classifier_width = 1;
  c.model.projection_dim = 16;
  c.model.image_size = 32;
  c.train.epochs = 2;
  c.train.batch_clr = 8;
  c.train.batch_cls = 8;
  c.train.batch_seg = 4;
  c.train.clr_steps_per_epoch = 2;
  c.train.cls_batches_per_epoch = 2;
  c.train.seg_batches_per_epoch = 2;
  c.train.repeat_k = 2;
  return c;
}

constexpr std::size_t kPigment = 3;

std::vector<StepKind> kinds(const std::vector<StepRecord>& steps) {
  std::vector<StepKind> k;
  for (const auto& s : steps) k.push_back(s.kind);
  return k;
}

TEST(Trainer, EpochFollowsClrClsRefreshSegEval) {
  Trainer t(small_config(), labeled(), &unlabeled(), kPigment);
  t.run();
  using K = StepKind;
  const std::vector<K> epoch{K::clr, K::clr, K::cls, K::cls, K::e3_refresh, K::seg, K::seg, K::seg, K::seg, K::eval};
  std::vector<K> expected = epoch;
  expected.insert(expected.end(), epoch.begin(), epoch.end());
  EXPECT_EQ(kinds(t.steps()), expected);
  EXPECT_EQ(t.epochs().size(), 2u);
  EXPECT_TRUE(t.finished());
  EXPECT_FALSE(t.step());
  // Seg steps run batch by batch, each batch repeated K times.
  std::vector<std::pair<std::size_t, std::size_t>> seg;
  for (const auto& s : t.steps())
    if (s.kind == K::seg && s.epoch == 0) seg.emplace_back(s.index, s.repeat);
  EXPECT_EQ(seg, (std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {0, 1}, {1, 0}, {1, 1}}));
  for (const auto& s : t.steps())
    if (s.kind == K::clr) EXPECT_EQ(s.batch, 8u);
}

TEST(Trainer, EachStepKindTouchesOnlyItsGroups) {
  Trainer t(small_config(), labeled(), &unlabeled(), kPigment);
  t.run();
  const std::map<StepKind, std::vector<ParamGroup>> expected{
      {StepKind::clr, {ParamGroup::encoder, ParamGroup::projection}},
      {StepKind::cls, {ParamGroup::encoder, ParamGroup::classifier}},
      {StepKind::seg, {ParamGroup::encoder, ParamGroup::decoder}},
      {StepKind::e3_refresh, {}},
      {StepKind::eval, {}}};
  for (const auto& s : t.steps()) EXPECT_EQ(s.changed, expected.at(s.kind)) << to_string(s.kind) << " " << s.index;
}

TEST(Trainer, DisablingClrAndSegLeavesPlainClassifierTraining) {
  auto c = small_config();
  c.train.enable_clr = false;
  c.train.enable_seg = false;
  Trainer t(c, labeled(), &unlabeled(), kPigment);
  t.run();
  using K = StepKind;
  EXPECT_EQ(kinds(t.steps()), (std::vector<K>{K::cls, K::cls, K::eval, K::cls, K::cls, K::eval}));
  for (const auto& s : t.steps()) {
    if (s.kind == K::cls) {
      EXPECT_EQ(s.changed, (std::vector<ParamGroup>{ParamGroup::encoder, ParamGroup::classifier}));
    }
  }
  for (const auto& e : t.epochs()) {
    EXPECT_EQ(e.clr_steps, 0u);
    EXPECT_EQ(e.seg_steps, 0u);
    EXPECT_TRUE(std::isnan(e.clr_loss));
  }
}

TEST(Trainer, SingleToggles) {
  auto c = small_config();
  c.train.epochs = 1;
  c.train.enable_clr = false;
  Trainer a(c, labeled(), &unlabeled(), kPigment);
  a.run();
  for (const auto& s : a.steps()) EXPECT_NE(s.kind, StepKind::clr);
  EXPECT_EQ(a.epochs()[0].seg_steps, 4u);

  c.train.enable_clr = true;
  c.train.enable_seg = false;
  Trainer b(c, labeled(), &unlabeled(), kPigment);
  b.run();
  for (const auto& s : b.steps()) {
    EXPECT_NE(s.kind, StepKind::seg);
    EXPECT_NE(s.kind, StepKind::e3_refresh);
  }
  EXPECT_EQ(b.epochs()[0].clr_steps, 2u);
}

TEST(Trainer, RepeatKCountsOptimizerSteps) {
  for (std::size_t k : {1u, 3u}) {
    auto c = small_config();
    c.train.epochs = 1;
    c.train.repeat_k = k;
    c.train.enable_clr = false;
    Trainer t(c, labeled(), &unlabeled(), kPigment);
    t.run();
    const auto n = std::count_if(t.steps().begin(), t.steps().end(),
                                 [](const StepRecord& s) { return s.kind == StepKind::seg; });
    EXPECT_EQ(static_cast<std::size_t>(n), 2 * k);
    EXPECT_EQ(t.epochs()[0].seg_steps, 2 * k);
  }
}

TEST(Trainer, E3IsFixedWithinAnEpochAndFollowsTheBestCheckpoint) {
  Trainer t(small_config(), labeled(), &unlabeled(), kPigment);
  std::optional<std::uint64_t> best_hash_at_epoch1;
  while (t.step()) {
    const auto& last = t.steps().back();
    if (last.kind == StepKind::eval && last.epoch == 0) best_hash_at_epoch1 = content_hash(*t.best());
  }
  std::map<std::size_t, std::uint64_t> refresh;
  for (const auto& s : t.steps())
    if (s.kind == StepKind::e3_refresh) refresh[s.epoch] = s.e3_hash;
  ASSERT_EQ(refresh.size(), 2u);
  for (const auto& s : t.steps())
    if (s.kind == StepKind::seg) EXPECT_EQ(s.e3_hash, refresh.at(s.epoch));
  EXPECT_NE(refresh[0], 0u);
  ASSERT_TRUE(best_hash_at_epoch1);
  EXPECT_EQ(refresh[1], *best_hash_at_epoch1);
}

TEST(Trainer, BestCheckpointCarriesTheMaximumValidationMetric) {
  auto c = small_config();
  c.train.epochs = 3;
  c.train.enable_clr = false;
  c.train.enable_seg = false;
  Trainer t(c, labeled(), &unlabeled(), kPigment);
  t.run();
  ASSERT_TRUE(t.best());
  double mx = -1;
  std::size_t best_epoch = 0;
  for (const auto& e : t.epochs()) {
    if (e.selection_metric > mx) {
      mx = e.selection_metric;
      best_epoch = e.epoch;
    }
  }
  EXPECT_EQ(t.best()->selection_metric, mx);
  std::size_t flagged = 0;
  for (const auto& e : t.epochs())
    if (e.best) flagged = e.epoch;
  EXPECT_EQ(static_cast<std::size_t>(t.best()->epoch), flagged);
  EXPECT_GE(flagged, best_epoch);
  EXPECT_EQ(t.best()->selection_definition, kSelectionDefinition);
  EXPECT_EQ(t.best()->meta.at("attribute").get<std::size_t>(), kPigment);
  EXPECT_EQ(t.best()->meta.at("attribute_name").get<std::string>(), "pigment_network");
}

TEST(Trainer, SameSeedGivesIdenticalCheckpointBytes) {
  auto c = small_config();
  c.train.epochs = 1;
  const auto a = train_attribute(c, labeled(), &unlabeled(), kPigment);
  const auto b = train_attribute(c, labeled(), &unlabeled(), kPigment);
  EXPECT_EQ(serialize(a.best), serialize(b.best));
  c.seed = 78;
  const auto d = train_attribute(c, labeled(), &unlabeled(), kPigment);
  EXPECT_NE(serialize(a.best), serialize(d.best));
}

TEST(Trainer, ResumeContinuesBitwise) {
  const auto c = small_config();
  for (std::size_t cut : {3u, 6u, 11u}) {
    Trainer a(c, labeled(), &unlabeled(), kPigment);
    for (std::size_t i = 0; i < cut; ++i) a.step();
    const auto state = deserialize(serialize(a.save_state()));
    Trainer b(c, labeled(), &unlabeled(), kPigment);
    b.load_state(state);
    for (int i = 0; i < 4; ++i) {
      ASSERT_TRUE(a.step());
      ASSERT_TRUE(b.step());
      const auto& sa = a.steps().back();
      const auto& sb = b.steps().back();
      EXPECT_EQ(sa.kind, sb.kind);
      EXPECT_EQ(std::isnan(sa.loss), std::isnan(sb.loss));
      if (!std::isnan(sa.loss)) EXPECT_EQ(sa.loss, sb.loss);
      EXPECT_EQ(sa.e3_hash, sb.e3_hash);
    }
    EXPECT_EQ(serialize(capture(a.model())), serialize(capture(b.model()))) << "cut " << cut;
    EXPECT_EQ(a.steps().size(), b.steps().size());
  }
}

TEST(Trainer, StateFromAnotherConfigIsRejected) {
  Trainer a(small_config(), labeled(), &unlabeled(), kPigment);
  a.step();
  auto other = small_config();
  other.train.repeat_k = 5;
  Trainer b(other, labeled(), &unlabeled(), kPigment);
  EXPECT_THROW(b.load_state(a.save_state()), CheckpointError);
  Trainer d(small_config(), labeled(), &unlabeled(), 0);
  EXPECT_THROW(d.load_state(a.save_state()), CheckpointError);
}

TEST(Trainer, AttributeWithoutMasksSkipsSegmentation) {
  const auto d = data::gen_synthetic(60, 32, 4, data::IndicatorRates{0.3, 0.3, 0.3, 0.3, 0.0});
  auto c = small_config();
  c.train.epochs = 1;
  Trainer t(c, d, &unlabeled(), 4);
  t.run();
  bool noted = false;
  for (const auto& s : t.steps()) {
    EXPECT_NE(s.kind, StepKind::seg);
    if (s.kind == StepKind::e3_refresh) noted = !s.note.empty();
  }
  EXPECT_TRUE(noted);
  EXPECT_FALSE(t.epochs()[0].val_auc[0].has_value());
  EXPECT_EQ(t.epochs()[0].selection_metric, 0.5);
}

TEST(Steps, ContrastiveLossStartsNearUniformAndDecreases) {
  auto c = small_config();
  c.train.epochs = 1;
  c.optim.lr = 1e-3;
  Trainer t(c, labeled(), &unlabeled(), kPigment);
  const std::vector<std::size_t> batch{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
  std::vector<double> losses;
  for (int i = 0; i < 10; ++i) losses.push_back(t.clr_step(batch, 123));
  EXPECT_NEAR(losses[0], std::log(23.0), 0.5);
  for (std::size_t i = 1; i < losses.size(); ++i) EXPECT_LT(losses[i], losses[i - 1]) << "step " << i;
}

TEST(Steps, SinglePairContrastiveStepIsDegenerate) {
  Trainer t(small_config(), labeled(), &unlabeled(), kPigment);
  EXPECT_EQ(t.clr_step({0}, 1), 0.0);
}

TEST(Steps, ClassificationLossDecreasesOnAFixedBatch) {
  auto c = small_config();
  c.optim.lr = 1e-3;
  Trainer t(c, labeled(), &unlabeled(), kPigment);
  const auto train = labeled().indices(data::Split::train);
  const std::vector<std::size_t> batch(train.begin(), train.begin() + 16);
  std::vector<double> losses;
  for (int i = 0; i < 20; ++i) losses.push_back(t.cls_step(batch));
  EXPECT_LT(losses.back(), 0.5 * losses.front());
}

TEST(Steps, SegmentationLossDecreasesOnFixedStacks) {
  auto c = small_config();
  c.optim.lr = 1e-3;
  Trainer t(c, labeled(), &unlabeled(), kPigment);
  t.refresh_e3();
  std::vector<std::size_t> batch;
  std::vector<float> masks;
  for (std::size_t i : labeled().indices(data::Split::train)) {
    if (!labeled().samples[i].present(kPigment)) continue;
    batch.push_back(i);
    const auto& m = labeled().samples[i].masks[kPigment];
    masks.insert(masks.end(), m.begin(), m.end());
    if (batch.size() == 6) break;
  }
  const auto stacks = t.build_stacks(batch);
  EXPECT_EQ(stacks.shape(), (Shape{6, 12, 32, 32}));
  std::vector<double> losses;
  for (int i = 0; i < 20; ++i) losses.push_back(t.seg_step(stacks, masks));
  EXPECT_LT(losses.back(), losses.front() - 0.05);
}

TEST(Steps, StacksNeedE3) {
  Trainer t(small_config(), labeled(), &unlabeled(), kPigment);
  EXPECT_THROW(t.build_stacks({0}), StateError);
}

TEST(Steps, NonFiniteLossIsADivergence) {
  Trainer t(small_config(), labeled(), &unlabeled(), kPigment);
  for (auto& ref : t.model().parameters(ParamGroup::classifier))
    for (auto& v : ref.param->value.data()) v = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(t.cls_step({0, 1}), NumericError);
}

TEST(Modes, HeadTargetsAndWidths) {
  const auto& s = labeled().samples[0];
  EXPECT_EQ(head_targets(s, 2, MultitaskMode::per_attribute).size(), 1u);
  const auto two = head_targets(s, 2, MultitaskMode::two_task);
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two[1], static_cast<float>(s.diagnosis));
  EXPECT_EQ(head_targets(s, 2, MultitaskMode::five_task).size(), 5u);
  EXPECT_EQ(head_targets(s, 2, MultitaskMode::six_task).size(), 6u);
  EXPECT_EQ(cam_head(2, MultitaskMode::per_attribute), 0u);
  EXPECT_EQ(cam_head(2, MultitaskMode::two_task), 0u);
  EXPECT_EQ(cam_head(2, MultitaskMode::five_task), 2u);
  EXPECT_EQ(cam_head(4, MultitaskMode::six_task), 4u);
  EXPECT_EQ(head_names(1, MultitaskMode::two_task), (std::vector<std::string>{"milia_like_cyst", "diagnosis"}));
}

TEST(Modes, WidthMismatchIsAConfigError) {
  auto c = small_config();
  c.train.multitask_mode = MultitaskMode::six_task;
  EXPECT_THROW(Trainer(c, labeled(), &unlabeled(), 0), ConfigError);
  c.model.classifier_width = 6;
  Trainer t(c, labeled(), &unlabeled(), 0);
  EXPECT_EQ(t.model().classifier().width(), 6u);
}

TEST(Modes, MultitaskRunSharesOneModelAcrossAttributes) {
  auto c = small_config();
  c.train.epochs = 1;
  c.train.enable_clr = false;
  c.train.seg_batches_per_epoch = 1;
  c.train.repeat_k = 1;
  c.train.multitask_mode = MultitaskMode::five_task;
  c.model.classifier_width = 5;
  const auto results = train_all(c, labeled(), &unlabeled());
  ASSERT_EQ(results.size(), 5u);
  for (std::size_t j = 0; j < 5; ++j) {
    EXPECT_EQ(results[j].best.meta.at("cam_head").get<std::size_t>(), j);
    EXPECT_EQ(results[j].epochs[0].val_auc.size(), 5u);
  }
  // Attribute 1 starts from attribute 0's final weights, so its first
  // classification step is not the one a fresh model would take.
  Trainer fresh(c, labeled(), &unlabeled(), 1);
  fresh.step();
  EXPECT_NE(fresh.steps()[0].loss, results[1].steps[0].loss);
}

}  // namespace
}  // namespace biounet::pipeline
