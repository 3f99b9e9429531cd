#include "afm/nets/velocity.hpp"

#include <vector>

#include "afm/errors.hpp"

namespace afm::nets {

VelocityNet::VelocityNet(const VelocitySpec& spec, num::ParameterSet& params, num::Rng& rng, const std::string& name)
    : spec_(spec), mlp_(spec.input_dim(), spec.hidden, spec.depth, spec.state_dim, params, rng, name + ".mlp") {
  if (spec.state_dim == 0) throw ValidationError("velocity output dimension must be positive");
}

num::Var VelocityNet::record(num::Tape& tape, num::Var state, num::Var context, num::Var covariates,
                             num::Var embed) const {
  auto expect = [&](num::Var v, std::size_t cols, const char* what) {
    if (tape.cols(v) != cols || tape.rows(v) != tape.rows(state)) {
      throw ValidationError(std::string("velocity input '") + what + "' has shape " +
                            num::shape_string(tape.rows(v), tape.cols(v)) + ", expected " +
                            num::shape_string(tape.rows(state), cols));
    }
  };
  expect(state, spec_.state_dim, "state");
  expect(context, spec_.context_dim, "context");
  expect(embed, spec_.embed_dim, "embed");
  std::vector<num::Var> parts = {state, context};
  if (spec_.covariate_dim > 0) {
    if (!covariates.valid()) throw ValidationError("velocity net expects covariates");
    expect(covariates, spec_.covariate_dim, "covariates");
    parts.push_back(covariates);
  }
  parts.push_back(embed);
  return mlp_.record(tape, tape.concat_cols(parts));
}

num::Matrix VelocityNet::evaluate(const num::ParameterSet& params, const num::Matrix& state,
                                  const num::Matrix& context, const num::Matrix& covariates,
                                  const num::Matrix& embed) const {
  num::Tape tape(&params);
  const num::Var y = tape.input(state.rows(), state.cols(), "state");
  const num::Var h = tape.input(context.rows(), context.cols(), "context");
  const num::Var e = tape.input(embed.rows(), embed.cols(), "embed");
  num::Var c;
  if (spec_.covariate_dim > 0) c = tape.input(covariates.rows(), covariates.cols(), "covariates");
  record(tape, y, h, c, e);
  tape.set_input(y, state);
  tape.set_input(h, context);
  tape.set_input(e, embed);
  if (c.valid()) tape.set_input(c, covariates);
  return tape.forward();
}

}  // namespace afm::nets
