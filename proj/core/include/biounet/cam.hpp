#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "biounet/checkpoint.hpp"
#include "biounet/config.hpp"
#include "biounet/models.hpp"

namespace biounet::cam {

inline constexpr double kNormalizeEpsilon = 1e-12;
inline constexpr std::size_t kStackDepth = nn::EncoderConfig::kBlockCount;

/// A single-channel map in [0, 1]. A map without spatial contrast
/// (max - min <= 1e-12 before normalization) is returned as zeros and
/// flagged degenerate.
struct Heatmap {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<float> values;
  bool degenerate = false;
};

/// Unnormalized map (h*w) for one sample from block activations A and
/// score gradients dS/dA, both (C, h, w):
///   grad_cam:    ReLU(sum_k mean(dS/dA_k) A_k)
///   grad_cam_pp: ReLU(sum_k w_k A_k), w_k = sum_ij a_ij ReLU(g_ij),
///                a_ij = g^2 / (2 g^2 + sum_ij(A_k) g^3)   (0 where g = 0)
///   layer_cam:   ReLU(sum_k ReLU(g_k) * A_k)
template <typename T>
std::vector<double> raw_map(CamMethod method, std::span<const T> activation, std::span<const T> gradient,
                            std::size_t channels, std::size_t h, std::size_t w);

/// Bilinear resize to (out_h, out_w) followed by min-max normalization.
Heatmap finalize(std::span<const double> raw, std::size_t h, std::size_t w, std::size_t out_h, std::size_t out_w);

/// raw_map + finalize for sample `n` of a batched activation and its gradient.
template <typename T>
Heatmap from_activation(CamMethod method, const Tensor<T>& activation, const Tensor<T>& gradient, std::size_t n,
                        std::size_t out_h, std::size_t out_w);

/// Twelve per-block maps for one sample, channel k-1 from block k.
struct HeatmapStack {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t target = 0;
  CamMethod method = CamMethod::grad_cam;
  std::uint64_t source_hash = 0;  // checkpoint the frozen encoder was loaded from
  std::vector<float> data;        // kStackDepth * h * w
  std::array<bool, kStackDepth> degenerate{};

  /// Map of block k (1-based).
  std::span<const float> block(std::size_t k) const;
  /// Final-block map used as the CAM localization mask.
  std::span<const float> last() const { return block(kStackDepth); }
};

/// Encoder + head evaluated in eval mode on images (N, 3, H, W); returns the
/// heatmaps of block `block` (1..12) for the logit at `target`.
template <typename T>
std::vector<Heatmap> block_maps(nn::Encoder<T>& encoder, const nn::ClassifierHead<T>& head, const Tensor<T>& images,
                                std::size_t block, std::size_t target, CamMethod method);

template <typename T>
std::vector<Heatmap> grad_cam(nn::Encoder<T>& encoder, const nn::ClassifierHead<T>& head, const Tensor<T>& images,
                              std::size_t block, std::size_t target) {
  return block_maps(encoder, head, images, block, target, CamMethod::grad_cam);
}
template <typename T>
std::vector<Heatmap> grad_cam_pp(nn::Encoder<T>& encoder, const nn::ClassifierHead<T>& head, const Tensor<T>& images,
                                 std::size_t block, std::size_t target) {
  return block_maps(encoder, head, images, block, target, CamMethod::grad_cam_pp);
}
template <typename T>
std::vector<Heatmap> layer_cam(nn::Encoder<T>& encoder, const nn::ClassifierHead<T>& head, const Tensor<T>& images,
                               std::size_t block, std::size_t target) {
  return block_maps(encoder, head, images, block, target, CamMethod::layer_cam);
}

/// One forward and one backward pass per batch give all twelve maps of every
/// sample. Samples do not interact in eval mode, so the gradient of the
/// summed target logits is each sample's own gradient.
template <typename T>
std::vector<HeatmapStack> build_stacks(nn::Encoder<T>& encoder, const nn::ClassifierHead<T>& head,
                                       const Tensor<T>& images, std::size_t target, CamMethod method);

template <typename T>
std::vector<HeatmapStack> build_stacks(FrozenEncoder<T>& e3, const Tensor<T>& images, std::size_t target,
                                       CamMethod method) {
  auto stacks = build_stacks(e3.encoder, e3.head, images, target, method);
  for (auto& s : stacks) s.source_hash = e3.checkpoint_hash;
  return stacks;
}

/// Packs stacks into an (N, 12, H, W) tensor.
template <typename T>
Tensor<T> to_tensor(const std::vector<HeatmapStack>& stacks);

/// `<sample_id>_attr<j>_block<k>_<method>.pgm`
std::string heatmap_filename(const std::string& sample_id, std::size_t attribute, std::size_t block,
                             CamMethod method);

}  // namespace biounet::cam
