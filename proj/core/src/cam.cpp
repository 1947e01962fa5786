#include "biounet/cam.hpp"

#include <algorithm>
#include <cmath>

#include "biounet/ops.hpp"

namespace biounet::cam {

template <typename T>
std::vector<double> raw_map(CamMethod method, std::span<const T> activation, std::span<const T> gradient,
                            std::size_t channels, std::size_t h, std::size_t w) {
  const std::size_t P = h * w;
  if (activation.size() != channels * P || gradient.size() != channels * P) {
    throw DimensionError("cam: activation/gradient length does not match (" + std::to_string(channels) + ", " +
                         std::to_string(h) + ", " + std::to_string(w) + ")");
  }
  std::vector<double> map(P, 0.0);
  for (std::size_t k = 0; k < channels; ++k) {
    const T* a = activation.data() + k * P;
    const T* g = gradient.data() + k * P;
    switch (method) {
      case CamMethod::grad_cam: {
        double alpha = 0;
        for (std::size_t i = 0; i < P; ++i) alpha += g[i];
        alpha /= static_cast<double>(P);
        for (std::size_t i = 0; i < P; ++i) map[i] += alpha * a[i];
        break;
      }
      case CamMethod::grad_cam_pp: {
        double sum_a = 0;
        for (std::size_t i = 0; i < P; ++i) sum_a += a[i];
        double weight = 0;
        for (std::size_t i = 0; i < P; ++i) {
          const double gi = g[i];
          if (gi == 0.0) continue;
          const double g2 = gi * gi;
          const double denom = 2.0 * g2 + sum_a * g2 * gi;
          const double aij = denom != 0.0 ? g2 / denom : 0.0;
          weight += aij * std::max(gi, 0.0);
        }
        for (std::size_t i = 0; i < P; ++i) map[i] += weight * a[i];
        break;
      }
      case CamMethod::layer_cam:
        for (std::size_t i = 0; i < P; ++i) map[i] += std::max(static_cast<double>(g[i]), 0.0) * a[i];
        break;
    }
  }
  for (auto& v : map) v = std::max(v, 0.0);
  return map;
}

Heatmap finalize(std::span<const double> raw, std::size_t h, std::size_t w, std::size_t out_h, std::size_t out_w) {
  if (raw.size() != h * w) throw DimensionError("cam: raw map length does not match its extent");
  const std::vector<double> resized =
      (h == out_h && w == out_w) ? std::vector<double>(raw.begin(), raw.end())
                                 : ops::resize_bilinear<double>(raw, h, w, out_h, out_w);
  Heatmap hm{out_h, out_w, std::vector<float>(out_h * out_w, 0.0f), false};
  const auto [lo, hi] = std::minmax_element(resized.begin(), resized.end());
  const double range = resized.empty() ? 0.0 : *hi - *lo;
  if (!(range > kNormalizeEpsilon)) {
    hm.degenerate = true;
    return hm;
  }
  for (std::size_t i = 0; i < resized.size(); ++i) hm.values[i] = static_cast<float>((resized[i] - *lo) / range);
  return hm;
}

template <typename T>
Heatmap from_activation(CamMethod method, const Tensor<T>& activation, const Tensor<T>& gradient, std::size_t n,
                        std::size_t out_h, std::size_t out_w) {
  const Shape& s = activation.shape();
  if (!(gradient.shape() == s)) throw DimensionError("cam: gradient shape " + gradient.shape().str() + " vs " + s.str());
  if (n >= s.n) throw DimensionError("cam: sample index out of range");
  const std::size_t len = s.sample();
  const auto raw = raw_map<T>(method, activation.data().subspan(n * len, len), gradient.data().subspan(n * len, len),
                              s.c, s.h, s.w);
  return finalize(raw, s.h, s.w, out_h, out_w);
}

std::span<const float> HeatmapStack::block(std::size_t k) const {
  if (k < 1 || k > kStackDepth) throw ContractError("heatmap stack: block index must lie in 1..12");
  const std::size_t P = h * w;
  return std::span<const float>(data).subspan((k - 1) * P, P);
}

namespace {

template <typename T>
struct CamPass {
  nn::EncoderOutput<T> encoded;
};

template <typename T>
CamPass<T> run_pass(nn::Encoder<T>& encoder, const nn::ClassifierHead<T>& head, const Tensor<T>& images,
                    std::size_t target) {
  if (target >= head.width()) {
    throw ContractError("cam: target " + std::to_string(target) + " outside head width " +
                        std::to_string(head.width()));
  }
  Tape<T> tape;
  Tensor<T> x = images.clone();
  x.set_requires_grad(true);
  CamPass<T> pass{encoder.forward(tape, x, nn::NormMode::eval, nn::Domain::image)};
  Tensor<T> logits = head.logits(tape, pass.encoded.features);
  const std::size_t N = logits.shape().n;
  const std::size_t K = logits.shape().c;
  std::vector<T> pick(N * K, T(0));
  for (std::size_t n = 0; n < N; ++n) pick[n * K + target] = T(1);
  Tensor<T> score = ops::weighted_sum(tape, logits, std::span<const T>(pick));
  tape.backward(score);
  return pass;
}

}  // namespace

template <typename T>
std::vector<Heatmap> block_maps(nn::Encoder<T>& encoder, const nn::ClassifierHead<T>& head, const Tensor<T>& images,
                                std::size_t block, std::size_t target, CamMethod method) {
  if (block < 1 || block > kStackDepth) throw ContractError("cam: block index must lie in 1..12");
  auto pass = run_pass(encoder, head, images, target);
  Tensor<T>& act = pass.encoded.blocks[block - 1];
  const Tensor<T> grad(act.shape(), std::vector<T>(act.grad().begin(), act.grad().end()));
  std::vector<Heatmap> maps;
  for (std::size_t n = 0; n < images.shape().n; ++n)
    maps.push_back(from_activation(method, act, grad, n, images.shape().h, images.shape().w));
  return maps;
}

template <typename T>
std::vector<HeatmapStack> build_stacks(nn::Encoder<T>& encoder, const nn::ClassifierHead<T>& head,
                                       const Tensor<T>& images, std::size_t target, CamMethod method) {
  const std::size_t N = images.shape().n;
  const std::size_t H = images.shape().h;
  const std::size_t W = images.shape().w;
  auto pass = run_pass(encoder, head, images, target);
  std::vector<HeatmapStack> stacks(N);
  for (auto& s : stacks) {
    s.h = H;
    s.w = W;
    s.target = target;
    s.method = method;
    s.data.assign(kStackDepth * H * W, 0.0f);
  }
  for (std::size_t k = 0; k < kStackDepth; ++k) {
    Tensor<T>& act = pass.encoded.blocks[k];
    const Tensor<T> grad(act.shape(), std::vector<T>(act.grad().begin(), act.grad().end()));
    for (std::size_t n = 0; n < N; ++n) {
      Heatmap hm = from_activation(method, act, grad, n, H, W);
      std::copy(hm.values.begin(), hm.values.end(), stacks[n].data.begin() + static_cast<std::ptrdiff_t>(k * H * W));
      stacks[n].degenerate[k] = hm.degenerate;
    }
  }
  return stacks;
}

template <typename T>
Tensor<T> to_tensor(const std::vector<HeatmapStack>& stacks) {
  if (stacks.empty()) throw DimensionError("cam: no stacks to pack");
  const std::size_t H = stacks[0].h, W = stacks[0].w;
  Tensor<T> out({stacks.size(), kStackDepth, H, W});
  for (std::size_t n = 0; n < stacks.size(); ++n) {
    if (stacks[n].h != H || stacks[n].w != W) throw DimensionError("cam: stacks differ in extent");
    std::copy(stacks[n].data.begin(), stacks[n].data.end(), out.ptr() + n * kStackDepth * H * W);
  }
  return out;
}

std::string heatmap_filename(const std::string& sample_id, std::size_t attribute, std::size_t block,
                             CamMethod method) {
  return sample_id + "_attr" + std::to_string(attribute) + "_block" + std::to_string(block) + "_" +
         to_string(method) + ".pgm";
}

template std::vector<double> raw_map(CamMethod, std::span<const float>, std::span<const float>, std::size_t,
                                     std::size_t, std::size_t);
template std::vector<double> raw_map(CamMethod, std::span<const double>, std::span<const double>, std::size_t,
                                     std::size_t, std::size_t);
template Heatmap from_activation(CamMethod, const Tensor<float>&, const Tensor<float>&, std::size_t, std::size_t,
                                 std::size_t);
template Heatmap from_activation(CamMethod, const Tensor<double>&, const Tensor<double>&, std::size_t, std::size_t,
                                 std::size_t);
template std::vector<Heatmap> block_maps(nn::Encoder<float>&, const nn::ClassifierHead<float>&,
                                         const Tensor<float>&, std::size_t, std::size_t, CamMethod);
template std::vector<Heatmap> block_maps(nn::Encoder<double>&, const nn::ClassifierHead<double>&,
                                         const Tensor<double>&, std::size_t, std::size_t, CamMethod);
template std::vector<HeatmapStack> build_stacks(nn::Encoder<float>&, const nn::ClassifierHead<float>&,
                                                const Tensor<float>&, std::size_t, CamMethod);
template std::vector<HeatmapStack> build_stacks(nn::Encoder<double>&, const nn::ClassifierHead<double>&,
                                                const Tensor<double>&, std::size_t, CamMethod);
template Tensor<float> to_tensor(const std::vector<HeatmapStack>&);
template Tensor<double> to_tensor(const std::vector<HeatmapStack>&);

}  // namespace biounet::cam
