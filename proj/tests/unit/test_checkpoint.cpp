#include <gtest/gtest.h>

#include <filesystem>

#include "biounet/checkpoint.hpp"
#include "biounet/errors.hpp"

namespace biounet {
namespace {

using ops::NormMode;

nn::ModelConfig small_config() {
  nn::ModelConfig c;
  c.encoder.stage_widths = {8, 16, 16, 32};
  c.decoder.widths = {8, 8, 4, 4};
  c.classifier_width = 2;
  c.projection_dim = 16;
  c.image_size = 32;
  return c;
}

Tensor<float> images(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> x({n, 3, 32, 32});
  for (auto& v : x.data()) v = static_cast<float>(rng.normal());
  return x;
}

std::vector<float> values(const Tensor<float>& t) { return {t.data().begin(), t.data().end()}; }

// A model with nontrivial Adam moments and running statistics.
nn::BioUNet<float> trained_model() {
  nn::BioUNet<float> m(small_config(), 11);
  for (int s = 0; s < 2; ++s) {
    Tape<float> tape;
    auto y = m.classify(tape, images(3, 20 + s), NormMode::train);
    tape.backward(ops::sum<float>(tape, y));
    for (auto& ref : m.parameters()) {
      Parameter<float>& p = *ref.param;
      if (!p.value.has_grad()) continue;
      for (std::size_t i = 0; i < p.first_moment.size(); ++i) {
        p.first_moment[i] += 0.01f * static_cast<float>(i % 7);
        p.second_moment[i] += 0.002f;
      }
      p.step += 1;
    }
    m.zero_grad();
  }
  return m;
}

TEST(Checkpoint, SerializationRoundTripIsExact) {
  auto m = trained_model();
  Checkpoint ck = capture(m);
  ck.epoch = 4;
  ck.seed = 99;
  ck.selection_metric = 0.8125;
  ck.selection_definition = "mean validation AUC";
  ck.meta = {{"attribute", 3}, {"note", "x"}};
  ck.blobs["inner"] = {1, 2, 3, 255};
  const auto bytes = serialize(ck);
  const Checkpoint back = deserialize(bytes);
  EXPECT_EQ(serialize(back), bytes);
  EXPECT_EQ(back.model, ck.model);
  EXPECT_EQ(back.epoch, 4);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.selection_metric, 0.8125);
  EXPECT_EQ(back.meta, ck.meta);
  EXPECT_EQ(back.blobs, ck.blobs);
  ASSERT_EQ(back.entries.size(), ck.entries.size());
  for (std::size_t i = 0; i < ck.entries.size(); ++i) {
    EXPECT_EQ(back.entries[i].name, ck.entries[i].name);
    EXPECT_EQ(back.entries[i].values, ck.entries[i].values);
  }
  EXPECT_EQ(content_hash(back), content_hash(ck));
}

TEST(Checkpoint, RestoreReproducesParametersMomentsAndStatistics) {
  auto m = trained_model();
  const Checkpoint ck = capture(m);
  nn::BioUNet<float> other(small_config(), 12345);
  restore(ck, other);
  auto a = m.parameters(), b = other.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(values(a[i].param->value), values(b[i].param->value)) << a[i].name;
    EXPECT_EQ(a[i].param->first_moment, b[i].param->first_moment);
    EXPECT_EQ(a[i].param->second_moment, b[i].param->second_moment);
    EXPECT_EQ(a[i].param->step, b[i].param->step);
  }
  const auto x = images(2, 5);
  Tape<float> t1, t2;
  EXPECT_EQ(values(m.classify(t1, x, NormMode::eval)), values(other.classify(t2, x, NormMode::eval)));
  EXPECT_EQ(serialize(capture(other)), serialize(ck));
}

TEST(Checkpoint, FileRoundTrip) {
  auto m = trained_model();
  const Checkpoint ck = capture(m);
  const auto path = std::filesystem::temp_directory_path() / "biounet_ck_test.bin";
  save(ck, path.string());
  EXPECT_EQ(serialize(load_checkpoint(path.string())), serialize(ck));
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path.string()), IoError);
}

TEST(Checkpoint, ArchitectureMismatchIsRejected) {
  auto m = trained_model();
  const Checkpoint ck = capture(m);
  auto cfg = small_config();
  cfg.encoder.stage_widths = {8, 16, 16, 16};
  nn::BioUNet<float> other(cfg, 1);
  EXPECT_THROW(restore(ck, other), CheckpointError);
  EXPECT_THROW(clone_to_e3(other.encoder(), ck), CheckpointError);
}

TEST(Checkpoint, PrecisionMismatchIsRejected) {
  auto m = trained_model();
  const Checkpoint ck = capture(m);
  nn::BioUNet<double> other(small_config(), 1);
  EXPECT_THROW(restore(ck, other), CheckpointError);
}

TEST(Checkpoint, CorruptBytesAreRejected) {
  auto m = trained_model();
  auto bytes = serialize(capture(m));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize(bad_magic), CheckpointError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(deserialize(truncated), CheckpointError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(deserialize(trailing), CheckpointError);
  EXPECT_THROW(deserialize({}), CheckpointError);
}

TEST(Checkpoint, MissingEntryIsRejected) {
  auto m = trained_model();
  Checkpoint ck = capture(m);
  ck.entries.pop_back();
  nn::BioUNet<float> other(small_config(), 1);
  EXPECT_THROW(restore(ck, other), CheckpointError);
}

TEST(E3, FreshCloneMatchesEncoderBitwise) {
  auto m = trained_model();
  Checkpoint ck = capture(m);
  ck.selection_metric = 0.731;
  auto e3 = clone_to_e3(m.encoder(), ck);
  EXPECT_EQ(e3.selection_metric, 0.731);
  EXPECT_EQ(e3.checkpoint_hash, content_hash(ck));
  const auto x = images(2, 8);
  Tape<float> t1, t2;
  const auto a = m.encoder().forward(t1, x, NormMode::eval, nn::Domain::image);
  const auto b = e3.encoder.forward(t2, x, NormMode::eval, nn::Domain::image);
  EXPECT_EQ(values(a.features), values(b.features));
  EXPECT_EQ(values(m.classifier().logits(t1, a.features)), values(e3.head.logits(t2, b.features)));
}

TEST(E3, PerturbingE1LeavesE3OutputsUnchanged) {
  auto m = trained_model();
  auto e3 = clone_to_e3(m.encoder(), capture(m));
  const auto x = images(2, 9);
  Tape<float> t1;
  const auto before = values(e3.encoder.forward(t1, x, NormMode::eval, nn::Domain::image).features);
  for (auto& ref : m.parameters(nn::ParamGroup::encoder))
    for (auto& v : ref.param->value.data()) v *= -1.5f;
  Tape<float> t2;
  m.encoder().forward(t2, x, NormMode::train, nn::Domain::image);
  Tape<float> t3;
  EXPECT_EQ(values(e3.encoder.forward(t3, x, NormMode::eval, nn::Domain::image).features), before);
}

TEST(E3, InstantiateBuildsTheRecordedArchitecture) {
  auto m = trained_model();
  const Checkpoint ck = capture(m);
  auto copy = instantiate<float>(ck);
  EXPECT_EQ(copy.config(), m.config());
  EXPECT_EQ(serialize(capture(copy)), serialize(ck));
}

}  // namespace
}  // namespace biounet
