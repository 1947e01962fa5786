#include <benchmark/benchmark.h>

#include "biounet/cam.hpp"
#include "biounet/losses.hpp"
#include "biounet/models.hpp"
#include "biounet/ops.hpp"
#include "biounet/random.hpp"

using namespace biounet;

namespace {

Tensor<float> random_tensor(Shape shape, std::uint64_t seed, bool grad = false) {
  Rng rng(seed);
  Tensor<float> t(shape);
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  t.set_requires_grad(grad);
  return t;
}

nn::ModelConfig bench_model(std::size_t size) {
  nn::ModelConfig c;
  c.image_size = size;
  return c;
}

}  // namespace

static void BM_Conv3x3ForwardBackward(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto channels = static_cast<std::size_t>(state.range(1));
  auto x = random_tensor({8, channels, side, side}, 1, true);
  auto k = random_tensor({channels, channels, 3, 3}, 2, true);
  for (auto _ : state) {
    Tape<float> tape;
    auto y = ops::conv2d<float>(tape, x, k, nullptr, {1, 1});
    tape.backward(ops::sum<float>(tape, y));
    benchmark::DoNotOptimize(k.grad().data());
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_Conv3x3ForwardBackward)->Args({64, 16})->Args({32, 32})->Args({16, 64})->Unit(benchmark::kMillisecond);

static void BM_EncoderForwardBackward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  nn::BioUNet<float> model(bench_model(64), 3);
  const auto x = random_tensor({batch, 3, 64, 64}, 4);
  for (auto _ : state) {
    model.zero_grad();
    Tape<float> tape;
    auto logits = model.logits(tape, x, nn::NormMode::train);
    tape.backward(ops::sum<float>(tape, logits));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_EncoderForwardBackward)->Arg(1)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

static void BM_HeatmapStack(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  nn::BioUNet<float> model(bench_model(64), 5);
  const auto x = random_tensor({batch, 3, 64, 64}, 6);
  {
    Tape<float> tape;
    model.logits(tape, x, nn::NormMode::train);
  }
  for (auto _ : state) {
    auto stacks = cam::build_stacks(model.encoder(), model.classifier(), x, 0, CamMethod::grad_cam);
    benchmark::DoNotOptimize(stacks.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_HeatmapStack)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

static void BM_SegmentationForwardBackward(benchmark::State& state) {
  nn::BioUNet<float> model(bench_model(64), 7);
  auto stack = random_tensor({8, 12, 64, 64}, 8);
  for (auto& v : stack.data()) v = 0.5f * (v + 1.0f);
  for (auto _ : state) {
    model.zero_grad();
    Tape<float> tape;
    tape.backward(ops::sum<float>(tape, model.segment(tape, stack, nn::NormMode::train)));
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_SegmentationForwardBackward)->Unit(benchmark::kMillisecond);

static void BM_NtXent(benchmark::State& state) {
  const auto views = static_cast<std::size_t>(state.range(0));
  auto e = random_tensor({views, 128, 1, 1}, 9, true);
  for (auto _ : state) {
    Tape<float> tape;
    auto l = loss::nt_xent<float>(tape, e, 0.5f);
    tape.backward(l.value);
  }
}
BENCHMARK(BM_NtXent)->Arg(24)->Arg(96)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
