#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "uasam/param_store.hpp"

namespace uasam {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// StepLR period, counted in optimizer steps.
  std::uint64_t decay_every = 1000;
  double decay_factor = 0.5;
};

/// Adam moments and the StepLR schedule position.
struct OptimizerState {
  double learning_rate = 1e-4;
  std::uint64_t step_count = 0;
  std::uint64_t decay_every = 1000;
  double decay_factor = 0.5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;

  static OptimizerState from_config(const AdamConfig& cfg);
  void validate() const;
};

/// One Adam update of every unfrozen parameter, then the StepLR decay when
/// the new step count is a multiple of decay_every. Throws if a trainable
/// parameter has no gradient buffer.
void adam_step(ParamStore& store, OptimizerState& state);

}  // namespace uasam
