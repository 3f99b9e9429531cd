#include "afm/nets/layers.hpp"

#include "afm/errors.hpp"

namespace afm::nets {

Linear::Linear(std::size_t in, std::size_t out, num::ParameterSet& params, num::Rng& rng, const std::string& name,
               bool zero_init)
    : in_(in), out_(out) {
  weight_ = params.add(name + ".weight", zero_init ? num::Matrix(in, out) : num::fan_in_uniform(in, out, in, rng));
  bias_ = params.add(name + ".bias", num::Matrix(1, out));
}

num::Var Linear::record(num::Tape& tape, num::Var x) const {
  return tape.add_row(tape.matmul(x, tape.param(weight_)), tape.param(bias_));
}

Mlp::Mlp(std::size_t in, std::size_t hidden, std::size_t depth, std::size_t out, num::ParameterSet& params,
         num::Rng& rng, const std::string& name, bool zero_output) {
  std::size_t width = in;
  for (std::size_t k = 0; k < depth; ++k) {
    layers_.emplace_back(width, hidden, params, rng, name + ".hidden" + std::to_string(k));
    width = hidden;
  }
  layers_.emplace_back(width, out, params, rng, name + ".out", zero_output);
}

num::Var Mlp::record(num::Tape& tape, num::Var x) const {
  for (std::size_t k = 0; k + 1 < layers_.size(); ++k) x = tape.tanh(layers_[k].record(tape, x));
  return layers_.back().record(tape, x);
}

LstmLayer::LstmLayer(std::size_t in, std::size_t hidden, num::ParameterSet& params, num::Rng& rng,
                     const std::string& name)
    : in_(in), hidden_(hidden) {
  wx_ = params.add(name + ".wx", num::fan_in_uniform(in, 4 * hidden, in, rng));
  wh_ = params.add(name + ".wh", num::fan_in_uniform(hidden, 4 * hidden, hidden, rng));
  bias_ = params.add(name + ".bias", num::Matrix(1, 4 * hidden));
}

std::vector<num::Var> LstmLayer::record(num::Tape& tape, std::span<const num::Var> xs, bool reverse,
                                        num::Var gate_offset) const {
  const std::size_t n = xs.size();
  const std::size_t h = hidden_;
  std::vector<num::Var> out(n);
  const num::Var wx = tape.param(wx_);
  const num::Var wh = tape.param(wh_);
  const num::Var bias = tape.param(bias_);
  num::Var state;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t t = reverse ? n - 1 - k : k;
    num::Var z = tape.matmul(xs[t], wx);
    if (state.valid()) z = tape.add(z, tape.matmul(out[reverse ? t + 1 : t - 1], wh));
    if (gate_offset.valid()) z = tape.add(z, gate_offset);
    z = tape.add_row(z, bias);
    state = tape.lstm_cell(z, state);
    out[t] = tape.slice_cols(state, 0, h);
  }
  return out;
}

BiLstm::BiLstm(std::size_t in, std::size_t hidden, std::size_t layers, num::ParameterSet& params, num::Rng& rng,
               const std::string& name)
    : hidden_(hidden) {
  if (layers == 0 || hidden == 0) throw ValidationError("LSTM needs at least one layer and one hidden unit");
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t width = l == 0 ? in : 2 * hidden;
    forward_.emplace_back(width, hidden, params, rng, name + ".l" + std::to_string(l) + ".fwd");
    backward_.emplace_back(width, hidden, params, rng, name + ".l" + std::to_string(l) + ".bwd");
  }
}

BiLstm::Output BiLstm::record(num::Tape& tape, std::span<const num::Var> xs,
                              std::span<const num::Var> gate_offsets) const {
  std::vector<num::Var> inputs(xs.begin(), xs.end());
  Output out;
  for (std::size_t l = 0; l < forward_.size(); ++l) {
    const num::Var fwd_offset = l == 0 && !gate_offsets.empty() ? gate_offsets[0] : num::Var{};
    const num::Var bwd_offset = l == 0 && gate_offsets.size() > 1 ? gate_offsets[1] : num::Var{};
    out.forward = forward_[l].record(tape, inputs, false, fwd_offset);
    out.backward = backward_[l].record(tape, inputs, true, bwd_offset);
    if (l + 1 < forward_.size()) {
      for (std::size_t t = 0; t < inputs.size(); ++t) {
        const num::Var both[2] = {out.forward[t], out.backward[t]};
        inputs[t] = tape.concat_cols(both);
      }
    }
  }
  return out;
}

}  // namespace afm::nets
