#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "afm/numcore/params.hpp"
#include "afm/numcore/rng.hpp"
#include "afm/numcore/tape.hpp"

namespace afm::nets {

// x W + b, with W fan-in uniform (or zero) and b zero.
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, num::ParameterSet& params, num::Rng& rng, const std::string& name,
         bool zero_init = false);

  num::Var record(num::Tape& tape, num::Var x) const;
  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }
  num::ParamId weight() const { return weight_; }
  num::ParamId bias() const { return bias_; }

 private:
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  num::ParamId weight_ = 0;
  num::ParamId bias_ = 0;
};

// tanh hidden layers followed by a linear output layer.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::size_t in, std::size_t hidden, std::size_t depth, std::size_t out, num::ParameterSet& params,
      num::Rng& rng, const std::string& name, bool zero_output = true);

  num::Var record(num::Tape& tape, num::Var x) const;
  const Linear& output_layer() const { return layers_.back(); }

 private:
  std::vector<Linear> layers_;
};

// Single-direction LSTM layer, gate order (i, f, g, o):
//   z = x Wx + h Wh + b [+ offset]
//   c' = sigmoid(f) c + sigmoid(i) tanh(g),  h' = sigmoid(o) tanh(c')
// Zero initial state.
class LstmLayer {
 public:
  LstmLayer() = default;
  LstmLayer(std::size_t in, std::size_t hidden, num::ParameterSet& params, num::Rng& rng, const std::string& name);

  // Hidden states aligned with xs. With reverse the recurrence runs from the
  // last element to the first. gate_offset, when valid, is a B x 4H term
  // added at every step.
  std::vector<num::Var> record(num::Tape& tape, std::span<const num::Var> xs, bool reverse,
                               num::Var gate_offset = {}) const;

  std::size_t in() const { return in_; }
  std::size_t hidden() const { return hidden_; }

 private:
  std::size_t in_ = 0;
  std::size_t hidden_ = 0;
  num::ParamId wx_ = 0;
  num::ParamId wh_ = 0;
  num::ParamId bias_ = 0;
};

// Stack of bidirectional LSTM layers; layer k > 0 reads the concatenated
// forward and backward states of layer k - 1.
class BiLstm {
 public:
  BiLstm() = default;
  BiLstm(std::size_t in, std::size_t hidden, std::size_t layers, num::ParameterSet& params, num::Rng& rng,
         const std::string& name);

  struct Output {
    std::vector<num::Var> forward;   // last layer, per step
    std::vector<num::Var> backward;  // last layer, per step
  };
  // gate_offsets, when non-empty, holds one B x 4H term per direction of the
  // first layer (forward, backward).
  Output record(num::Tape& tape, std::span<const num::Var> xs, std::span<const num::Var> gate_offsets = {}) const;

  std::size_t hidden() const { return hidden_; }
  std::size_t layers() const { return forward_.size(); }

 private:
  std::size_t hidden_ = 0;
  std::vector<LstmLayer> forward_;
  std::vector<LstmLayer> backward_;
};

}  // namespace afm::nets
