#pragma once

#include <vector>

#include "biounet/config.hpp"
#include "biounet/models.hpp"

namespace biounet {

/// Adam with classic L2 weight decay: the gradient used by the moment
/// updates is g + weight_decay * theta. Bias-corrected moments, epsilon
/// added to the root of the second moment.
///
/// Parameters without an allocated gradient are left untouched (their step
/// count does not advance). Before anything is modified every gradient is
/// checked; a non-finite one raises NumericError naming the parameter, and
/// no parameter changes. With `grad_clip > 0` gradients are scaled so their
/// global L2 norm is at most `grad_clip`.
template <typename T>
void adam_step(const std::vector<nn::ParamRef<T>>& params, const OptimConfig& options);

/// Global L2 norm of the allocated gradients.
template <typename T>
double gradient_norm(const std::vector<nn::ParamRef<T>>& params);

}  // namespace biounet
