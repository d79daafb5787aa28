#include "uasam/optimizer.hpp"

#include <cmath>

namespace uasam {

OptimizerState OptimizerState::from_config(const AdamConfig& cfg) {
  OptimizerState s;
  s.learning_rate = cfg.learning_rate;
  s.beta1 = cfg.beta1;
  s.beta2 = cfg.beta2;
  s.epsilon = cfg.epsilon;
  s.decay_every = cfg.decay_every;
  s.decay_factor = cfg.decay_factor;
  s.validate();
  return s;
}

void OptimizerState::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("optimizer: learning_rate must be > 0");
  if (!(decay_factor > 0.0 && decay_factor < 1.0)) throw ConfigError("optimizer: decay_factor must be in (0,1)");
  if (decay_every == 0) throw ConfigError("optimizer: decay_every must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("optimizer: betas must be in [0,1)");
  if (!(epsilon > 0.0)) throw ConfigError("optimizer: epsilon must be > 0");
}

void adam_step(ParamStore& store, OptimizerState& state) {
  const auto trainable = store.trainable_names();
  for (const auto& name : trainable) {
    if (!store.get(name).has_grad()) throw Error("adam_step: parameter " + name + " has no gradient");
  }
  const auto t = static_cast<double>(state.step_count + 1);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (const auto& name : trainable) {
    Tensor& p = store.get_mutable(name);
    auto& m = state.first_moment[name];
    auto& v = state.second_moment[name];
    if (m.size() != p.numel()) m.assign(p.numel(), 0.0);
    if (v.size() != p.numel()) v.assign(p.numel(), 0.0);
    auto data = p.mutable_data();
    auto grad = p.grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      data[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
  ++state.step_count;
  if (state.step_count % state.decay_every == 0) state.learning_rate *= state.decay_factor;
}

}  // namespace uasam
