#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "uasam/param_store.hpp"

namespace uasam {

struct GradCheckResult {
  /// max over checked scalars of |analytic - numeric| / max(|analytic|, |numeric|, floor)
  /// with floor = 1e-6 * max(1, |loss|). The floor keeps central-difference
  /// roundoff on near-zero gradients from dominating the ratio.
  double max_relative_error = 0.0;
  std::size_t checked_scalars = 0;
  std::size_t checked_tensors = 0;
  /// Frozen tensors left out of the sweep.
  std::size_t frozen_skipped = 0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares backward() against fourth-order central differences for every
/// scalar of every unfrozen parameter in `store`. Steps epsilon, epsilon/10
/// and epsilon/100 are tried and the best agreement per scalar is kept.
/// `loss_fn` must return a scalar built from the store's tensors and be deterministic (it is evaluated twice up front
/// and must agree bit for bit, otherwise Error is thrown).
GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, ParamStore& store, double epsilon = 1e-3);

}  // namespace uasam
