#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "biounet/errors.hpp"

namespace biounet {

/// Allocator with 64-byte alignment. Vectorized reductions split their work
/// according to the address of the first element, so buffers with a fixed
/// alignment keep floating-point results independent of heap layout.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Extent of a rank-4 tensor in (batch, channel, height, width) order.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t numel() const noexcept { return n * c * h * w; }
  std::size_t plane() const noexcept { return h * w; }
  std::size_t sample() const noexcept { return c * h * w; }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense rank-4 array that may take part in a gradient tape.
///
/// A Tensor is a handle: copies share storage, like references to the
/// same variable. Use clone() for an independent copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape) { return Tensor(shape); }
  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value) { return full({1, 1, 1, 1}, value); }

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T* ptr() { return impl_->data.data(); }
  const T* ptr() const { return impl_->data.data(); }

  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
  T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;
  T item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on);

  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient buffer; allocated (zero-filled) on first access.
  std::span<T> grad();
  std::span<const T> grad() const;
  void zero_grad();
  void clear_grad() { impl_->grad.clear(); impl_->grad.shrink_to_fit(); }

  /// Deep copy of the data with no gradient and requires_grad=false.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    AlignedVector<T> data;
    AlignedVector<T> grad;
    bool requires_grad = false;
  };

  std::shared_ptr<Impl> impl_;
};

template <typename T>
inline T& Tensor<T>::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  const Shape& s = impl_->shape;
  return impl_->data[((n * s.c + c) * s.h + h) * s.w + w];
}

template <typename T>
inline T Tensor<T>::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
  const Shape& s = impl_->shape;
  return impl_->data[((n * s.c + c) * s.h + h) * s.w + w];
}

/// Trainable tensor plus its Adam state. Copying a Parameter deep-copies
/// the value so that model copies never alias each other.
template <typename T>
struct Parameter {
  Tensor<T> value;
  std::vector<T> first_moment;
  std::vector<T> second_moment;
  std::int64_t step = 0;

  Parameter() = default;
  explicit Parameter(Tensor<T> v);
  Parameter(const Parameter& other);
  Parameter& operator=(const Parameter& other);
  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;

  const Shape& shape() const { return value.shape(); }
  std::size_t numel() const { return value.numel(); }
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template struct Parameter<float>;
extern template struct Parameter<double>;

}  // namespace biounet
