#include "uasam/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace uasam {

namespace {

constexpr double kRelativeFloor = 1e-6;
constexpr double kGoodEnough = 1e-7;

double eval_no_grad(const std::function<Tensor()>& loss_fn) {
  NoGradGuard guard;
  return loss_fn().item();
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, ParamStore& store, double epsilon) {
  if (!(epsilon > 0.0)) throw Error("grad_check: epsilon must be positive");
  const double first = eval_no_grad(loss_fn);
  const double second = eval_no_grad(loss_fn);
  if (std::memcmp(&first, &second, sizeof(double)) != 0) {
    throw Error("grad_check: loss function is not deterministic under a fixed seed");
  }

  // Differences of f carry roundoff proportional to |f|, so the floor does too.
  const double floor = kRelativeFloor * std::max(1.0, std::abs(first));

  GradCheckResult result;
  store.zero_grad();
  clear_tape();
  Tensor loss = loss_fn();
  backward(loss);

  for (const auto& name : store.names()) {
    if (store.is_frozen(name)) {
      ++result.frozen_skipped;
      continue;
    }
    Tensor& p = store.get_mutable(name);
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto data = p.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double original = data[i];
      // Fourth-order central stencil. A step that straddles a ReLU kink gives
      // a wrong estimate, so shrinking steps are tried and the closest kept;
      // a wrong analytic gradient disagrees at every step.
      double rel = std::numeric_limits<double>::infinity(), numeric = 0.0;
      double h = epsilon;
      for (int attempt = 0; attempt < 3 && rel > kGoodEnough; ++attempt, h *= 0.1) {
        auto at = [&](double offset) {
          data[i] = original + offset;
          return eval_no_grad(loss_fn);
        };
        const double near = at(h) - at(-h);
        const double far = at(2.0 * h) - at(-2.0 * h);
        const double estimate = (8.0 * near - far) / (12.0 * h);
        const double denom = std::max({std::abs(analytic[i]), std::abs(estimate), floor});
        const double r = std::abs(analytic[i] - estimate) / denom;
        if (r < rel) {
          rel = r;
          numeric = estimate;
        }
      }
      data[i] = original;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_parameter = name;
        result.worst_index = i;
        result.worst_analytic = analytic[i];
        result.worst_numeric = numeric;
      }
      ++result.checked_scalars;
    }
    ++result.checked_tensors;
  }
  return result;
}

}  // namespace uasam
