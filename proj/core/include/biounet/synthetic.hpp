#pragma once

#include <array>
#include <cstdint>

#include "biounet/dataset.hpp"

namespace biounet::data {

/// Presence probabilities per attribute, in kAttributeNames order.
using IndicatorRates = std::array<double, kAttributeCount>;
inline constexpr IndicatorRates kDefaultRates{0.25, 0.25, 0.08, 0.55, 0.05};

struct LesionGeometry {
  double cx = 0, cy = 0;  // centre (pixels)
  double rx = 0, ry = 0;  // semi-axes
  double angle = 0;       // radians
  bool contains(double x, double y) const;
};

/// One generated dermoscopy-like image with exact indicator masks.
struct SyntheticSample {
  Sample sample;
  LesionGeometry lesion;
};

/// Diagnosis rule of the generator: positive iff streaks or negative network
/// is present, or at least three indicators are present.
int diagnosis_rule(const std::array<bool, kAttributeCount>& presence);

/// Sample `index` of the stream keyed by `seed`. Pixel values are multiples
/// of 1/255 so netpbm export is lossless.
SyntheticSample generate_sample(std::size_t index, std::size_t size, std::uint64_t seed, const IndicatorRates& rates);

/// Dataset A role: `n` labeled samples with a stratified split and
/// training-split normalization statistics (images stay unnormalized).
Dataset gen_synthetic(std::size_t n, std::size_t size, std::uint64_t seed, const IndicatorRates& rates = kDefaultRates);

/// Dataset B role: images only, drawn from a stream disjoint from Dataset A.
UnlabeledDataset gen_synthetic_unlabeled(std::size_t n, std::size_t size, std::uint64_t seed,
                                         const IndicatorRates& rates = kDefaultRates);

}  // namespace biounet::data
