#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "biounet/tape.hpp"
#include "biounet/tensor.hpp"

/// Differentiable kernels over NCHW tensors.
///
/// Every op computes its forward eagerly. When any input requires a
/// gradient, the output requires one too and a backward rule is appended to
/// the tape. Gradients accumulate into `grad()` of every input whose
/// `requires_grad()` is set; other inputs are never written.
namespace biounet::ops {

struct ConvOptions {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

/// Output extent of a strided window: floor((in + 2*pad - window)/stride) + 1.
std::size_t window_output(std::size_t in, std::size_t window, std::size_t stride, std::size_t pad);

/// 2-D cross-correlation. `kernel` is (C_out, C_in, kh, kw); `bias`, when
/// non-null, is (1, C_out, 1, 1).
template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>* bias,
                 ConvOptions options = {});

enum class PoolKind { max, avg, global_avg };

/// Unpadded pooling. `window` and `stride` are ignored for global_avg, which
/// yields (N, C, 1, 1).
template <typename T>
Tensor<T> pool2d(Tape<T>& tape, const Tensor<T>& input, PoolKind kind, std::size_t window = 2,
                 std::size_t stride = 2);

enum class NormMode { train, eval };

/// Per-channel running statistics of a batch-normalization layer.
template <typename T>
struct NormStats {
  std::vector<T> mean;
  std::vector<T> var;
  bool initialized = false;

  static NormStats identity(std::size_t channels) {
    return {std::vector<T>(channels, T(0)), std::vector<T>(channels, T(1)), true};
  }
};

inline constexpr double kNormMomentum = 0.1;
inline constexpr double kNormEpsilon = 1e-5;

/// Batch normalization. Train mode normalizes with batch statistics over
/// (N, H, W) and updates `stats` (momentum 0.1, unbiased running variance);
/// eval mode uses `stats` and throws StateError if they were never set.
template <typename T>
Tensor<T> batch_norm2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                       NormMode mode, NormStats<T>& stats);

/// Affine map y = x W + b with x flattened to (N, F). `weight` is
/// (F_in, F_out, 1, 1); `bias` is (1, F_out, 1, 1). Output is (N, F_out, 1, 1).
template <typename T>
Tensor<T> dense(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

/// ReLU with subgradient 0 at 0.
template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& input);

template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& input);

/// Softmax over the channel axis with max subtraction.
template <typename T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& input);

/// Nearest-neighbour resize; source index = floor(dst * in / out).
template <typename T>
Tensor<T> upsample_nearest(Tape<T>& tape, const Tensor<T>& input, std::size_t out_h, std::size_t out_w);

/// Channel concatenation of inputs sharing N, H and W.
template <typename T>
Tensor<T> concat_channels(Tape<T>& tape, const std::vector<Tensor<T>>& inputs);

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T factor);

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& input, Shape shape);

/// Channel `index` of the input, shape (N, 1, H, W).
template <typename T>
Tensor<T> select_channel(Tape<T>& tape, const Tensor<T>& input, std::size_t index);

/// Scalar sum of all elements.
template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& input);

/// Scalar sum of input * weights, with constant weights of equal length.
template <typename T>
Tensor<T> weighted_sum(Tape<T>& tape, const Tensor<T>& input, std::span<const T> weights);

/// Elementwise square (used by tests and regularizers).
template <typename T>
Tensor<T> square(Tape<T>& tape, const Tensor<T>& input);

/// Non-differentiable bilinear resize of one plane, half-pixel centers.
template <typename T>
std::vector<T> resize_bilinear(std::span<const T> plane, std::size_t h, std::size_t w, std::size_t out_h,
                               std::size_t out_w);

}  // namespace biounet::ops
