#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "hc/errors.hpp"
#include "hc/rng.hpp"

namespace hc {

using Shape = std::vector<std::int64_t>;

// Default-initializing allocator: vector growth leaves trivial types
// uninitialized instead of zero-filling. Op outputs overwrite every element,
// so the fill would be pure memory traffic.
template <class T, class Base = std::allocator<T>>
struct DefaultInitAllocator : Base {
  template <class U>
  struct rebind {
    using other = DefaultInitAllocator<U, typename std::allocator_traits<Base>::template rebind_alloc<U>>;
  };
  using Base::Base;
  template <class U>
  void construct(U* p) {
    ::new (static_cast<void*>(p)) U;
  }
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    std::allocator_traits<Base>::construct(static_cast<Base&>(*this), p,
                                           std::forward<Args>(args)...);
  }
};

template <class S>
using ValueBuffer = std::vector<S, DefaultInitAllocator<S>>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s);

// Dense value storage plus an optional same-shape gradient accumulator.
// Values are immutable once an op has produced them; grads are mutated
// only during a single-threaded backward pass.
template <class S>
struct TensorImpl {
  Shape shape;
  ValueBuffer<S> value;
  ValueBuffer<S> grad;  // sized like value iff requires_grad
  bool requires_grad = false;
};

// Lightweight shared handle to a TensorImpl.
template <class S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), S(0), requires_grad);
  }
  static Tensor ones(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), S(1), requires_grad);
  }
  static Tensor filled(Shape shape, S v, bool requires_grad = false) {
    auto impl = std::make_shared<TensorImpl<S>>();
    const std::int64_t n = checked_numel(shape);
    impl->shape = std::move(shape);
    impl->value.assign(static_cast<std::size_t>(n), v);
    impl->requires_grad = requires_grad;
    if (requires_grad) impl->grad.assign(static_cast<std::size_t>(n), S(0));
    return Tensor(std::move(impl));
  }
  // Value storage is left uninitialized; the caller must write every
  // element. The grad accumulator, when present, is still zeroed.
  static Tensor uninitialized(Shape shape, bool requires_grad = false) {
    auto impl = std::make_shared<TensorImpl<S>>();
    const std::int64_t n = checked_numel(shape);
    impl->shape = std::move(shape);
    impl->value.resize(static_cast<std::size_t>(n));
    impl->requires_grad = requires_grad;
    if (requires_grad) impl->grad.assign(static_cast<std::size_t>(n), S(0));
    return Tensor(std::move(impl));
  }
  static Tensor from_data(Shape shape, std::vector<S> data, bool requires_grad = false) {
    auto impl = std::make_shared<TensorImpl<S>>();
    const std::int64_t n = checked_numel(shape);
    if (n != static_cast<std::int64_t>(data.size()))
      throw ShapeError("tensor data size " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    impl->shape = std::move(shape);
    impl->value.assign(data.begin(), data.end());
    impl->requires_grad = requires_grad;
    if (requires_grad) impl->grad.assign(static_cast<std::size_t>(n), S(0));
    return Tensor(std::move(impl));
  }
  static Tensor scalar(S v, bool requires_grad = false) {
    return filled({1}, v, requires_grad);
  }
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
    Tensor t = uninitialized(std::move(shape), requires_grad);
    for (auto& v : t.impl_->value) v = static_cast<S>(rng.normal(0.0, stddev));
    return t;
  }
  static Tensor truncated_normal(Shape shape, Rng& rng, double stddev,
                                 bool requires_grad = false) {
    Tensor t = uninitialized(std::move(shape), requires_grad);
    for (auto& v : t.impl_->value) v = static_cast<S>(rng.truncated_normal(0.0, stddev));
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(impl_->shape.size()); }
  std::int64_t dim(std::int64_t i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->value.size()); }
  bool requires_grad() const { return impl_->requires_grad; }

  std::span<S> value() { return impl_->value; }
  std::span<const S> value() const { return impl_->value; }
  std::span<S> grad() {
    require_grad_buffer();
    return impl_->grad;
  }
  std::span<const S> grad() const {
    require_grad_buffer();
    return impl_->grad;
  }

  S item() const {
    if (numel() != 1) throw ShapeError("item() on tensor with numel " + std::to_string(numel()));
    return impl_->value[0];
  }

  // Enables (or disables) gradient accumulation for a leaf tensor.
  Tensor& set_requires_grad(bool on) {
    impl_->requires_grad = on;
    if (on)
      impl_->grad.assign(impl_->value.size(), S(0));
    else
      impl_->grad.clear();
    return *this;
  }

  void zero_grad() {
    if (impl_->requires_grad) std::fill(impl_->grad.begin(), impl_->grad.end(), S(0));
  }

  bool same_impl(const Tensor& other) const { return impl_ == other.impl_; }

  std::shared_ptr<TensorImpl<S>>& impl() { return impl_; }
  const std::shared_ptr<TensorImpl<S>>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl<S>> impl) : impl_(std::move(impl)) {}

  static std::int64_t checked_numel(const Shape& shape) {
    for (auto d : shape)
      if (d < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    return shape_numel(shape);
  }
  void require_grad_buffer() const {
    if (!impl_->requires_grad)
      throw Error("grad() on tensor without requires_grad");
  }

  std::shared_ptr<TensorImpl<S>> impl_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace hc
