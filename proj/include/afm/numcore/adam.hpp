#pragma once

#include <cstddef>
#include <vector>

#include "afm/numcore/matrix.hpp"
#include "afm/numcore/params.hpp"

namespace afm::num {

struct AdamState {
  std::size_t step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  double lr = 0.003;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  // Zero moments shaped like `params`.
  static AdamState for_params(const ParameterSet& params, double lr = 0.003);
};

// One bias-corrected Adam update, in place. All gradients are checked for
// finiteness before anything is modified.
void adam_step(AdamState& state, ParameterSet& params, const GradientSet& grads);

}  // namespace afm::num
