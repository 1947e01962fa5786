#include "biounet/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "biounet/random.hpp"

namespace biounet {
namespace {

template <typename T>
struct Evaluation {
  double value;
  std::uint64_t signature;
};

template <typename T>
Evaluation<T> evaluate(const ScalarProgram<T>& fn) {
  Tape<T> tape;
  tape.set_track_branches(true);
  Tensor<T> loss = fn(tape);
  if (loss.numel() != 1) throw ContractError("grad_check: program must return a scalar");
  const double v = static_cast<double>(loss.item());
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss during probing");
  return {v, tape.branch_signature()};
}

}  // namespace

template <typename T>
GradCheckReport grad_check(const ScalarProgram<T>& fn, std::vector<Tensor<T>> points,
                           const GradCheckOptions& options) {
  for (auto& p : points) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  std::uint64_t base_signature = 0;
  {
    Tape<T> tape;
    tape.set_track_branches(true);
    Tensor<T> loss = fn(tape);
    if (!std::isfinite(static_cast<double>(loss.item()))) throw NumericError("grad_check: non-finite loss");
    base_signature = tape.branch_signature();
    tape.backward(loss);
  }
  std::vector<std::vector<T>> analytic;
  for (auto& p : points) {
    auto g = p.grad();
    for (T v : g)
      if (!std::isfinite(static_cast<double>(v))) throw NumericError("grad_check: non-finite analytic gradient");
    analytic.emplace_back(g.begin(), g.end());
  }

  GradCheckReport report;
  const T h = static_cast<T>(options.step);
  Rng rng(options.seed);
  for (std::size_t t = 0; t < points.size(); ++t) {
    auto& p = points[t];
    std::vector<std::size_t> coords(p.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_tensor != 0 && coords.size() > options.max_coords_per_tensor) {
      rng.shuffle(coords);
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      T* x = p.ptr() + i;
      const T original = *x;
      double f[4];
      bool kink = false;
      const T offsets[4] = {T(2) * h, h, -h, T(-2) * h};
      for (int k = 0; k < 4; ++k) {
        *x = original + offsets[k];
        auto e = evaluate(fn);
        f[k] = e.value;
        kink = kink || e.signature != base_signature;
      }
      *x = original;
      if (kink) {
        ++report.excluded;
        continue;
      }
      const double hd = static_cast<double>(h);
      const double numeric = (8.0 * (f[1] - f[2]) - (f[0] - f[3])) / (12.0 * hd);
      const double a = static_cast<double>(analytic[t][i]);
      const double denom = std::max({std::abs(a), std::abs(numeric), options.scale_floor});
      const double err = std::abs(a - numeric) / denom;
      ++report.compared;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

template GradCheckReport grad_check<float>(const ScalarProgram<float>&, std::vector<Tensor<float>>,
                                           const GradCheckOptions&);
template GradCheckReport grad_check<double>(const ScalarProgram<double>&, std::vector<Tensor<double>>,
                                            const GradCheckOptions&);

}  // namespace biounet
