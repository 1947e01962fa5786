#include "biounet/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace biounet {

std::string Shape::str() const {
  std::ostringstream os;
  os << '[' << n << ',' << c << ',' << h << ',' << w << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, bool requires_grad) : impl_(std::make_shared<Impl>()) {
  impl_->shape = shape;
  impl_->data.assign(shape.numel(), T(0));
  impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) : impl_(std::make_shared<Impl>()) {
  if (data.size() != shape.numel()) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                         shape.str());
  }
  impl_->shape = shape;
  impl_->data.assign(data.begin(), data.end());
  impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  Tensor t(shape);
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape().str());
  return impl_->data[0];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  if (!on) clear_grad();
}

template <typename T>
std::span<T> Tensor<T>::grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
  return impl_->grad;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  return impl_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  return t;
}

template <typename T>
Parameter<T>::Parameter(Tensor<T> v) : value(std::move(v)) {
  value.set_requires_grad(true);
  first_moment.assign(value.numel(), T(0));
  second_moment.assign(value.numel(), T(0));
}

template <typename T>
Parameter<T>::Parameter(const Parameter& other)
    : first_moment(other.first_moment), second_moment(other.second_moment), step(other.step) {
  if (other.value.defined()) {
    value = other.value.clone();
    value.set_requires_grad(other.value.requires_grad());
  }
}

template <typename T>
Parameter<T>& Parameter<T>::operator=(const Parameter& other) {
  if (this != &other) {
    Parameter copy(other);
    *this = std::move(copy);
  }
  return *this;
}

template class Tensor<float>;
template class Tensor<double>;
template struct Parameter<float>;
template struct Parameter<double>;

}  // namespace biounet
