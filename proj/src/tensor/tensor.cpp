#include "uasam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace uasam {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor: zero extent in shape " + shape_str(shape));
  }
  if (uasam::numel(shape) != data.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = uasam::numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for " + shape_str(impl_->shape));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }

std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
void Tensor::set_requires_grad(bool value) { impl_->requires_grad = value; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }
std::span<double> Tensor::mutable_grad() { return impl_->grad; }

void Tensor::zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }
void Tensor::clear_grad() {
  impl_->grad.clear();
  impl_->grad.shrink_to_fit();
}

Tensor Tensor::clone() const { return Tensor(impl_->shape, impl_->data, false); }

namespace {

struct TapeEntry {
  std::shared_ptr<detail::TensorImpl> output;
  detail::BackwardFn fn;
};

struct Tape {
  std::vector<TapeEntry> entries;
  bool enabled = true;
};

Tape& tape() {
  thread_local Tape t;
  return t;
}

void check_finite(const char* op, const std::vector<double>& data) {
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite output");
  }
}

Tensor record(const char* op, Shape shape, std::vector<double> data, bool tracked, detail::BackwardFn fn) {
  check_finite(op, data);
  Tensor out(std::move(shape), std::move(data), tracked);
  if (tracked) tape().entries.push_back({out.impl(), std::move(fn)});
  return out;
}

}  // namespace

bool grad_enabled() { return tape().enabled; }
std::size_t tape_size() { return tape().entries.size(); }
void clear_tape() { tape().entries.clear(); }

NoGradGuard::NoGradGuard() : previous_(tape().enabled) { tape().enabled = false; }
NoGradGuard::~NoGradGuard() { tape().enabled = previous_; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + (loss.defined() ? shape_str(loss.shape()) : "undefined"));
  }
  if (!loss.requires_grad()) throw Error("backward: loss is not tracked");
  auto& entries = tape().entries;
  auto root = std::find_if(entries.rbegin(), entries.rend(),
                           [&](const TapeEntry& e) { return e.output == loss.impl(); });
  if (root == entries.rend()) {
    throw Error("backward: loss was not produced by a recorded op");
  }
  auto& g = loss.impl()->grad;
  if (g.empty()) g.assign(1, 0.0);
  g[0] += 1.0;
  for (auto it = root; it != entries.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->fn(it->output->grad);
  }
  // Intermediate grads die with their impls once the tape releases them.
  entries.clear();
}

namespace detail {

std::span<double> grad_buffer(const Tensor& t) {
  auto& g = t.impl()->grad;
  if (g.empty()) g.assign(t.numel(), 0.0);
  return g;
}

Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
  bool tracked = false;
  if (grad_enabled()) {
    for (const Tensor* t : inputs) tracked = tracked || t->requires_grad();
  }
  return record(op, std::move(shape), std::move(data), tracked, std::move(fn));
}

Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs, BackwardFn fn) {
  bool tracked = false;
  if (grad_enabled()) {
    for (const Tensor& t : inputs) tracked = tracked || t.requires_grad();
  }
  return record(op, std::move(shape), std::move(data), tracked, std::move(fn));
}

}  // namespace detail

}  // namespace uasam
