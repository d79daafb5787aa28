#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "uasam/errors.hpp"

namespace uasam {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};

}  // namespace detail

/// Dense row-major float64 array with optional gradient tracking.
///
/// A Tensor is a cheap handle; copies share storage. Ops never write to the
/// data of their inputs, so a handle can be treated as an immutable value.
/// The only writers are the optimizer and checkpoint loading, which go
/// through mutable_data() on parameters owned by a ParamStore.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool value);

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  /// Allocates (if needed) and zero-fills the gradient buffer.
  void zero_grad();
  void clear_grad();

  /// Deep copy without gradient or tape history.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  static Tensor from_impl(std::shared_ptr<detail::TensorImpl> impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
  }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Runs backward from a scalar loss produced by tracked ops.
/// Accumulates into every reachable requires_grad tensor, then clears the tape.
void backward(const Tensor& loss);

bool grad_enabled();
std::size_t tape_size();
void clear_tape();

/// Disables tape recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

using BackwardFn = std::function<void(std::span<const double> grad_out)>;

/// Wraps a freshly computed buffer as an op result. Checks finiteness and,
/// when any input is tracked, records `fn` on the tape.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::initializer_list<const Tensor*> inputs, BackwardFn fn);
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs, BackwardFn fn);

/// Gradient buffer of `t`, allocated on first use. Only valid when t.requires_grad().
std::span<double> grad_buffer(const Tensor& t);

}  // namespace detail

}  // namespace uasam
