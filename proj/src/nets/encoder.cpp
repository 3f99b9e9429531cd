#include "afm/nets/encoder.hpp"

#include <cmath>
#include <vector>

#include "afm/errors.hpp"

namespace afm::nets {

ContextEncoder::ContextEncoder(const EncoderSpec& spec, num::ParameterSet& params, num::Rng& rng,
                               const std::string& name)
    : spec_(spec),
      lstm_(spec.input_dim, spec.hidden, spec.layers, params, rng, name + ".lstm"),
      projection_(2 * spec.hidden, spec.out_dim, params, rng, name + ".proj") {
  if (spec.input_dim == 0 || spec.out_dim == 0) throw ValidationError("encoder dimensions must be positive");
}

num::Var ContextEncoder::record(num::Tape& tape, num::Var window, std::size_t w) const {
  if (w == 0) throw ValidationError("context window length must be at least 1");
  if (tape.cols(window) != w * spec_.input_dim) {
    throw ValidationError("context window has " + std::to_string(tape.cols(window)) + " columns, expected " +
                          std::to_string(w) + " x " + std::to_string(spec_.input_dim));
  }
  std::vector<num::Var> steps(w);
  for (std::size_t t = 0; t < w; ++t) steps[t] = tape.slice_cols(window, t * spec_.input_dim, spec_.input_dim);
  const BiLstm::Output states = lstm_.record(tape, steps);
  const num::Var finals[2] = {states.forward.back(), states.backward.front()};
  return projection_.record(tape, tape.concat_cols(finals));
}

void ContextEncoder::check_window(const num::Matrix& window, std::size_t w) const {
  if (w == 0) throw ValidationError("context window length must be at least 1");
  if (window.cols() != w * spec_.input_dim) {
    throw ValidationError("context window has " + std::to_string(window.cols()) + " columns, expected " +
                          std::to_string(w * spec_.input_dim));
  }
  for (std::size_t r = 0; r < window.rows(); ++r) {
    for (std::size_t c = 0; c < window.cols(); ++c) {
      if (!std::isfinite(window(r, c))) {
        throw ValidationError("context window row " + std::to_string(r) + " step " +
                              std::to_string(c / spec_.input_dim) + " is not finite");
      }
    }
  }
}

num::Matrix ContextEncoder::encode(const num::ParameterSet& params, const num::Matrix& window, std::size_t w) const {
  check_window(window, w);
  num::Tape tape(&params);
  const num::Var in = tape.input(window.rows(), window.cols(), "window");
  record(tape, in, w);
  tape.set_input(in, window);
  return tape.forward();
}

}  // namespace afm::nets
