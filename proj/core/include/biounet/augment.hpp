#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "biounet/config.hpp"

namespace biounet::data {

/// Enabled transforms with their ranges, plus the augmenter's own seed.
struct AugmentSpec {
  AugmentConfig ranges;
  std::uint64_t seed = 0;

  /// Every transform disabled.
  static AugmentSpec identity(std::uint64_t seed = 0);
  bool geometric() const { return ranges.rotation || ranges.scaling || ranges.cropping; }
};

/// Parameters drawn for one call, kept for reproducibility.
struct AugmentDraw {
  double rotation_deg = 0.0;
  double scale = 1.0;
  double crop = 1.0;  // kept side fraction
  double crop_dx = 0.0, crop_dy = 0.0;  // window offset in pixels
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
  bool hflip = false;
  bool vflip = false;
};

AugmentDraw draw_augment(const AugmentSpec& spec, std::size_t size, Rng& rng);

/// Applies a draw to a planar RGB image (3 * size * size). Geometric warps
/// sample bilinearly with reflect padding; flips are exact index reversals;
/// colour changes follow, and the result is clamped to [0, 1].
std::vector<float> apply_augment(std::span<const float> image, std::size_t size, const AugmentSpec& spec,
                                 const AugmentDraw& draw);

/// Same geometry applied to an image and a binary mask. The mask is warped
/// bilinearly and re-binarized at 0.5; colour changes touch only the image.
std::pair<std::vector<float>, std::vector<float>> apply_joint(std::span<const float> image,
                                                              std::span<const float> mask, std::size_t size,
                                                              const AugmentSpec& spec, const AugmentDraw& draw);

struct AugmentedView {
  std::vector<float> image;
  AugmentDraw draw;
};

/// T1(x), T2(x). Each view draws from its spec's seed combined with
/// `call_key`, so the pair is reproducible and the two views independent.
std::pair<AugmentedView, AugmentedView> augment_pair(std::span<const float> image, std::size_t size,
                                                     const AugmentSpec& spec1, const AugmentSpec& spec2,
                                                     std::uint64_t call_key = 0);

}  // namespace biounet::data
