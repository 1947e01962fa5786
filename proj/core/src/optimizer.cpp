#include "biounet/optimizer.hpp"

#include <cmath>

#include "biounet/errors.hpp"

namespace biounet {

template <typename T>
double gradient_norm(const std::vector<nn::ParamRef<T>>& params) {
  double sq = 0;
  for (const auto& ref : params) {
    const auto& v = ref.param->value;
    if (!v.has_grad()) continue;
    for (T g : v.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

template <typename T>
void adam_step(const std::vector<nn::ParamRef<T>>& params, const OptimConfig& o) {
  for (const auto& ref : params) {
    const auto& v = ref.param->value;
    if (!v.has_grad()) continue;
    for (T g : v.grad())
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + ref.name);
  }
  T clip = T(1);
  if (o.grad_clip > 0.0) {
    const double norm = gradient_norm(params);
    if (norm > o.grad_clip) clip = static_cast<T>(o.grad_clip / norm);
  }
  const T lr = static_cast<T>(o.lr), wd = static_cast<T>(o.weight_decay);
  const T b1 = static_cast<T>(o.beta1), b2 = static_cast<T>(o.beta2), eps = static_cast<T>(o.eps);
  for (const auto& ref : params) {
    Parameter<T>& p = *ref.param;
    if (!p.value.has_grad()) continue;
    p.step += 1;
    const T c1 = T(1) - static_cast<T>(std::pow(o.beta1, static_cast<double>(p.step)));
    const T c2 = T(1) - static_cast<T>(std::pow(o.beta2, static_cast<double>(p.step)));
    auto theta = p.value.data();
    auto grad = p.value.grad();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const T g = grad[i] * clip + wd * theta[i];
      p.first_moment[i] = b1 * p.first_moment[i] + (T(1) - b1) * g;
      p.second_moment[i] = b2 * p.second_moment[i] + (T(1) - b2) * g * g;
      const T m_hat = p.first_moment[i] / c1;
      const T v_hat = p.second_moment[i] / c2;
      theta[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template double gradient_norm(const std::vector<nn::ParamRef<float>>&);
template double gradient_norm(const std::vector<nn::ParamRef<double>>&);
template void adam_step(const std::vector<nn::ParamRef<float>>&, const OptimConfig&);
template void adam_step(const std::vector<nn::ParamRef<double>>&, const OptimConfig&);

}  // namespace biounet
