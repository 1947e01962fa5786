#include "grad_suite.hpp"

#include "biounet/losses.hpp"
#include "biounet/models.hpp"
#include "biounet/ops.hpp"
#include "biounet/random.hpp"

namespace biounet::testing {
namespace {

using T = double;
using Tn = Tensor<T>;

Tn random(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) {
  Tn t(s);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

std::vector<T> random_weights(Rng& rng, std::size_t n) {
  std::vector<T> w(n);
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  return w;
}

// Random linear read-out so every output element gets a distinct gradient.
Tn readout(Tape<T>& tape, const Tn& y, const std::vector<T>& w) { return ops::weighted_sum<T>(tape, y, w); }

}  // namespace

std::vector<GradCase> run_grad_suite(std::uint64_t seed) {
  std::vector<GradCase> cases;
  Rng rng = Rng::derive(seed, {0x67726164});
  auto check = [&](const std::string& name, const ScalarProgram<T>& fn, std::vector<Tn> points,
                   std::size_t max_coords = 0, double floor = 1e-8) {
    GradCheckOptions o;
    o.step = floor > 1e-8 ? 1e-3 : 1e-4;
    o.scale_floor = floor;
    o.seed = seed;
    o.max_coords_per_tensor = max_coords;
    cases.push_back({name, grad_check<T>(fn, std::move(points), o)});
  };

  {
    Tn x = random(rng, {2, 3, 5, 5}), k = random(rng, {4, 3, 3, 3}), b = random(rng, {1, 4, 1, 1});
    auto w = random_weights(rng, 2 * 4 * 5 * 5);
    check("conv2d 3x3 pad 1 + bias", [=](Tape<T>& t) { return readout(t, ops::conv2d<T>(t, x, k, &b, {1, 1}), w); },
          {x, k, b});
  }
  {
    Tn x = random(rng, {2, 2, 6, 6}), k = random(rng, {3, 2, 3, 3});
    auto w = random_weights(rng, 2 * 3 * 3 * 3);
    check("conv2d 3x3 stride 2", [=](Tape<T>& t) { return readout(t, ops::conv2d<T>(t, x, k, nullptr, {2, 1}), w); },
          {x, k});
  }
  {
    Tn x = random(rng, {2, 3, 4, 4}), k = random(rng, {2, 3, 1, 1});
    auto w = random_weights(rng, 2 * 2 * 2 * 2);
    check("conv2d 1x1 stride 2", [=](Tape<T>& t) { return readout(t, ops::conv2d<T>(t, x, k, nullptr, {2, 0}), w); },
          {x, k});
  }
  {
    Tn x = random(rng, {2, 2, 4, 4});
    auto w = random_weights(rng, 2 * 2 * 2 * 2);
    check("max pool", [=](Tape<T>& t) { return readout(t, ops::pool2d<T>(t, x, ops::PoolKind::max), w); }, {x});
    check("avg pool", [=](Tape<T>& t) { return readout(t, ops::pool2d<T>(t, x, ops::PoolKind::avg), w); }, {x});
    auto wg = random_weights(rng, 2 * 2);
    check("global avg pool",
          [=](Tape<T>& t) { return readout(t, ops::pool2d<T>(t, x, ops::PoolKind::global_avg), wg); }, {x});
  }
  {
    Tn x = random(rng, {3, 2, 3, 3}), g = random(rng, {1, 2, 1, 1}, 0.5, 1.5), b = random(rng, {1, 2, 1, 1});
    auto w = random_weights(rng, 3 * 2 * 3 * 3);
    check("batch norm (train)",
          [=](Tape<T>& t) {
            ops::NormStats<T> stats;
            return readout(t, ops::batch_norm2d<T>(t, x, g, b, ops::NormMode::train, stats), w);
          },
          {x, g, b});
    ops::NormStats<T> fixed{{0.1, -0.2}, {0.8, 1.3}, true};
    check("batch norm (eval)",
          [=](Tape<T>& t) {
            ops::NormStats<T> stats = fixed;
            return readout(t, ops::batch_norm2d<T>(t, x, g, b, ops::NormMode::eval, stats), w);
          },
          {x, g, b});
  }
  {
    Tn x = random(rng, {3, 5, 1, 1}), wt = random(rng, {5, 4, 1, 1}), b = random(rng, {1, 4, 1, 1});
    auto w = random_weights(rng, 3 * 4);
    check("dense", [=](Tape<T>& t) { return readout(t, ops::dense<T>(t, x, wt, b), w); }, {x, wt, b});
  }
  {
    Tn x = random(rng, {2, 4, 2, 2});
    auto w = random_weights(rng, x.numel());
    check("relu", [=](Tape<T>& t) { return readout(t, ops::relu<T>(t, x), w); }, {x});
    check("sigmoid", [=](Tape<T>& t) { return readout(t, ops::sigmoid<T>(t, x), w); }, {x});
    check("softmax", [=](Tape<T>& t) { return readout(t, ops::softmax<T>(t, x), w); }, {x});
    check("square", [=](Tape<T>& t) { return readout(t, ops::square<T>(t, x), w); }, {x});
    check("scale", [=](Tape<T>& t) { return readout(t, ops::scale<T>(t, x, T(-1.7)), w); }, {x});
    check("sum", [=](Tape<T>& t) { return ops::sum<T>(t, ops::square<T>(t, x)); }, {x});
    check("weighted sum", [=](Tape<T>& t) { return ops::weighted_sum<T>(t, x, w); }, {x});
    auto w2 = random_weights(rng, 2 * 1 * 2 * 2);
    check("select channel", [=](Tape<T>& t) { return readout(t, ops::select_channel<T>(t, x, 2), w2); }, {x});
    check("reshape", [=](Tape<T>& t) { return readout(t, ops::reshape<T>(t, x, {2, 16, 1, 1}), w); }, {x});
  }
  {
    Tn a = random(rng, {2, 3, 2, 2}), b = random(rng, {2, 3, 2, 2});
    auto w = random_weights(rng, a.numel());
    check("add", [=](Tape<T>& t) { return readout(t, ops::add<T>(t, a, b), w); }, {a, b});
    Tn c = random(rng, {2, 1, 2, 2});
    auto wc = random_weights(rng, 2 * 4 * 4);
    check("concat channels", [=](Tape<T>& t) { return readout(t, ops::concat_channels<T>(t, {a, c}), wc); }, {a, c});
  }
  {
    Tn x = random(rng, {2, 2, 3, 3});
    auto w = random_weights(rng, 2 * 2 * 6 * 6);
    check("upsample nearest", [=](Tape<T>& t) { return readout(t, ops::upsample_nearest<T>(t, x, 6, 6), w); }, {x});
  }
  {
    Tn x = random(rng, {4, 2, 1, 1}, -3.0, 3.0);
    std::vector<T> targets{1, 0, 0, 1, 1, 1, 0, 0};
    check("bce loss", [=](Tape<T>& t) { return loss::bce<T>(t, ops::sigmoid<T>(t, x), targets).value; }, {x});
  }
  {
    Tn x = random(rng, {2, 1, 4, 4}, -2.0, 2.0);
    std::vector<T> target(32);
    for (auto& v : target) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
    check("soft dice loss", [=](Tape<T>& t) { return loss::soft_dice<T>(t, ops::sigmoid<T>(t, x), target).value; },
          {x});
  }
  {
    Tn e = random(rng, {6, 5, 1, 1});
    check("nt-xent loss", [=](Tape<T>& t) { return loss::nt_xent<T>(t, e, T(0.5)).value; }, {e});
  }

  // Full compositions on a small model. Their losses sum over thousands of
  // terms, so they take a wider step and compare gradients below 1e-6 in
  // absolute terms.
  constexpr double kModelFloor = 1e-6;
  nn::ModelConfig mc;
  mc.encoder.stage_widths = {4, 8, 8, 8};
  mc.encoder.expansion = 4;
  mc.decoder.widths = {4, 4, 4, 4};
  mc.classifier_width = 2;
  mc.projection_dim = 4;
  mc.image_size = 32;
  auto model = std::make_shared<nn::BioUNet<T>>(mc, seed);
  auto points = [&](std::initializer_list<nn::ParamGroup> groups) {
    std::vector<Tn> p;
    for (auto g : groups)
      for (auto& ref : model->parameters(g)) p.push_back(ref.param->value);
    return p;
  };
  const Tn images = random(rng, {4, 3, 32, 32});
  const Tn stack = random(rng, {4, 12, 32, 32}, 0.0, 1.0);
  std::vector<T> labels{1, 0, 0, 1, 1, 0, 1, 0};
  std::vector<T> mask(4 * 32 * 32);
  for (auto& v : mask) v = rng.bernoulli(0.3) ? 1.0 : 0.0;
  const Tn pair_images = random(rng, {4, 3, 32, 32});
  check("model: classification (bce)",
        [=](Tape<T>& t) { return loss::bce<T>(t, model->classify(t, images, ops::NormMode::train), labels).value; },
        points({nn::ParamGroup::encoder, nn::ParamGroup::classifier}), 3, kModelFloor);
  check("model: segmentation (soft dice)",
        [=](Tape<T>& t) { return loss::soft_dice<T>(t, model->segment(t, stack, ops::NormMode::train), mask).value; },
        points({nn::ParamGroup::encoder, nn::ParamGroup::decoder}), 3, kModelFloor);
  check("model: contrastive (nt-xent)",
        [=](Tape<T>& t) {
          return loss::nt_xent<T>(t, model->project(t, pair_images, ops::NormMode::train), T(0.5)).value;
        },
        points({nn::ParamGroup::encoder, nn::ParamGroup::projection}), 3, kModelFloor);
  return cases;
}

}  // namespace biounet::testing
