#pragma once

#include <span>
#include <vector>

#include "biounet/tape.hpp"
#include "biounet/tensor.hpp"

namespace biounet::loss {

inline constexpr double kProbabilityClamp = 1e-7;
inline constexpr double kDiceEpsilon = 1e-7;
inline constexpr double kMinEmbeddingNorm = 1e-8;

template <typename T>
struct LossValue {
  Tensor<T> value;             // differentiable scalar
  std::vector<T> per_sample;  // breakdown, one entry per sample (or anchor)

  T item() const { return value.item(); }
};

/// Binary cross-entropy on probabilities of shape (N, K, 1, 1), summed over
/// the K heads and averaged over the batch. Probabilities are clamped to
/// [1e-7, 1 - 1e-7]. `targets` holds N*K values in {0, 1}.
template <typename T>
LossValue<T> bce(Tape<T>& tape, const Tensor<T>& probabilities, std::span<const T> targets);

/// Soft Dice loss per sample,
///   1 - 2 sum(t p) / (sum t^2 + sum p^2 + 1e-7),
/// averaged over the batch. `prediction` is (N, 1, H, W); `target` holds
/// N*H*W binary values.
template <typename T>
LossValue<T> soft_dice(Tape<T>& tape, const Tensor<T>& prediction, std::span<const T> target);

/// Normalized-temperature cross-entropy over 2N embeddings of shape
/// (2N, D, 1, 1). Rows 2i and 2i+1 are the two views of one image. Each
/// anchor's loss is -log of the softmax weight of its positive among its
/// 2N-1 cosine similarities scaled by 1/tau; the result averages all 2N
/// anchors.
template <typename T>
LossValue<T> nt_xent(Tape<T>& tape, const Tensor<T>& embeddings, T tau);

}  // namespace biounet::loss
