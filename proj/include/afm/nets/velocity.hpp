#pragma once

#include <cstddef>
#include <string>

#include "afm/nets/layers.hpp"
#include "afm/numcore/matrix.hpp"

namespace afm::nets {

struct VelocitySpec {
  std::size_t state_dim = 1;
  std::size_t context_dim = 64;
  std::size_t covariate_dim = 0;
  std::size_t embed_dim = 16;
  std::size_t hidden = 64;
  std::size_t depth = 3;

  std::size_t input_dim() const { return state_dim + context_dim + covariate_dim + embed_dim; }
};

// MLP on concat(y_s, h, c, embed(s)); the output layer starts at zero so the
// initial flow is the identity.
class VelocityNet {
 public:
  VelocityNet() = default;
  VelocityNet(const VelocitySpec& spec, num::ParameterSet& params, num::Rng& rng,
              const std::string& name = "velocity");

  const VelocitySpec& spec() const { return spec_; }
  // covariates may be an invalid Var when covariate_dim is 0.
  num::Var record(num::Tape& tape, num::Var state, num::Var context, num::Var covariates, num::Var embed) const;

  num::Matrix evaluate(const num::ParameterSet& params, const num::Matrix& state, const num::Matrix& context,
                       const num::Matrix& covariates, const num::Matrix& embed) const;

 private:
  VelocitySpec spec_;
  Mlp mlp_;
};

}  // namespace afm::nets
