#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "biounet/tape.hpp"
#include "biounet/tensor.hpp"

namespace biounet {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t compared = 0;
  /// Coordinates skipped because a perturbation crossed a ReLU kink,
  /// changed a pooling argmax or moved across a clamp.
  std::size_t excluded = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckOptions {
  double step = 1e-5;
  /// Upper bound on coordinates probed per tensor; 0 probes all of them.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
  /// Denominator floor of the relative error. Gradients below it are
  /// compared in absolute terms.
  double scale_floor = 1e-8;
};

template <typename T>
using ScalarProgram = std::function<Tensor<T>(Tape<T>&)>;

/// Compares the taped gradient of `fn` w.r.t. each tensor in `points` with a
/// fourth-order central difference
///   g ~ [8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))] / 12h.
/// The error per coordinate is |a - n| / max(|a|, |n|, scale_floor).
///
/// `fn` must read the tensors in `points` by handle; they are perturbed in
/// place and restored. A coordinate whose perturbations change the tape's
/// branch signature is excluded from the comparison. Throws NumericError if
/// any evaluated loss or gradient is non-finite.
template <typename T>
GradCheckReport grad_check(const ScalarProgram<T>& fn, std::vector<Tensor<T>> points,
                           const GradCheckOptions& options = {});

template <typename T>
GradCheckReport grad_check(const ScalarProgram<T>& fn, Tensor<T> point, T step) {
  GradCheckOptions options;
  options.step = static_cast<double>(step);
  return grad_check<T>(fn, std::vector<Tensor<T>>{std::move(point)}, options);
}

extern template GradCheckReport grad_check<float>(const ScalarProgram<float>&, std::vector<Tensor<float>>,
                                                  const GradCheckOptions&);
extern template GradCheckReport grad_check<double>(const ScalarProgram<double>&, std::vector<Tensor<double>>,
                                                   const GradCheckOptions&);

}  // namespace biounet
