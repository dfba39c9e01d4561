#include "mkg/numerics/adam.hpp"

#include <cmath>

#include "mkg/errors.hpp"

namespace mkg {

void adam_step(ParamStore& params, const Gradients& grads, AdamState& state) {
  if (params.size() != grads.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
  }
  for (const auto& [name, value] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) throw DimensionError("adam_step: no gradient for " + name);
    if (it->second.shape() != value.shape()) {
      throw DimensionError("adam_step: gradient for " + name + " has shape " +
                           shape_string(it->second.shape()) + ", parameter " +
                           shape_string(value.shape()));
    }
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);

  for (auto& [name, value] : params) {
    const Tensor& g = grads.at(name);
    auto [m_it, m_new] = state.first_moment.try_emplace(name, value.shape());
    auto [v_it, v_new] = state.second_moment.try_emplace(name, value.shape());
    Tensor& m = m_it->second;
    Tensor& v = v_it->second;
    if (m.shape() != value.shape() || v.shape() != value.shape()) {
      throw DimensionError("adam_step: moment shape drifted for " + name);
    }
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      value[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

}  // namespace mkg
