#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "biounet/tensor.hpp"

namespace biounet {

/// Ordered record of differentiable operations executed during one forward
/// build. Operations append themselves in execution order, so replaying the
/// records in reverse is a valid topological order for the backward pass.
///
/// A tape supports exactly one backward pass; build a new tape for the next
/// forward.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  void record(const char* op, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward rule.
  /// Throws ContractError for a non-scalar loss and StateError when the
  /// tape was already consumed.
  void backward(const Tensor<T>& loss);

  std::size_t size() const noexcept { return names_.size(); }
  bool consumed() const noexcept { return consumed_; }
  const std::vector<const char*>& op_names() const noexcept { return names_; }

  /// Branch decisions (ReLU signs, pooling argmax, clamps) taken by the
  /// forward computation, folded into one hash. Two evaluations with equal
  /// signatures took the same piecewise-smooth branch.
  /// Tracking is off by default; kernels skip the bookkeeping then.
  void note_branch(std::uint64_t value) noexcept;
  std::uint64_t branch_signature() const noexcept { return signature_; }
  void set_track_branches(bool on) noexcept { track_branches_ = on; }
  bool tracking_branches() const noexcept { return track_branches_; }

 private:
  std::vector<const char*> names_;
  std::vector<BackwardFn> rules_;
  std::uint64_t signature_ = 0x9e3779b97f4a7c15ULL;
  bool consumed_ = false;
  bool track_branches_ = false;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace biounet
