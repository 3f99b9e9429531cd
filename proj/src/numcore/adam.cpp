#include "afm/numcore/adam.hpp"

#include <cmath>

#include "afm/errors.hpp"

namespace afm::num {

AdamState AdamState::for_params(const ParameterSet& params, double lr) {
  AdamState s;
  s.lr = lr;
  for (const auto& p : params) {
    s.m.emplace_back(p.value.rows(), p.value.cols());
    s.v.emplace_back(p.value.rows(), p.value.cols());
  }
  return s;
}

void adam_step(AdamState& state, ParameterSet& params, const GradientSet& grads) {
  if (grads.blocks.size() != params.size() || state.m.size() != params.size()) {
    throw ValidationError("adam: optimizer state, gradients and parameters disagree in block count");
  }
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (!grads.blocks[b].same_shape(params[b].value) || !state.m[b].same_shape(params[b].value)) {
      throw ValidationError("adam: shape mismatch for parameter '" + params[b].name + "'");
    }
    if (!grads.blocks[b].all_finite()) {
      throw NumericalError("adam: non-finite gradient in parameter '" + params[b].name + "'");
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(state.beta1, t);
  const double bias2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto p = params[b].value.values();
    auto g = grads.blocks[b].values();
    auto m = state.m[b].values();
    auto v = state.v[b].values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      p[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

}  // namespace afm::num
