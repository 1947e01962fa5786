#include "biounet/tape.hpp"

#include "biounet/hash.hpp"

namespace biounet {

template <typename T>
void Tape<T>::record(const char* op, BackwardFn backward) {
  if (consumed_) throw StateError(std::string("cannot record '") + op + "' on a consumed tape");
  names_.push_back(op);
  rules_.push_back(std::move(backward));
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (consumed_) throw StateError("backward called twice on the same tape; rebuild the forward first");
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? loss.shape().str() : std::string("<undefined>")));
  }
  consumed_ = true;
  if (!loss.requires_grad()) {
    rules_.clear();
    return;
  }
  Tensor<T> seed = loss;
  seed.grad()[0] += T(1);
  for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
  rules_.clear();
  rules_.shrink_to_fit();
}

template <typename T>
void Tape<T>::note_branch(std::uint64_t value) noexcept {
  signature_ = hash_combine(signature_, value);
}

template class Tape<float>;
template class Tape<double>;

}  // namespace biounet
