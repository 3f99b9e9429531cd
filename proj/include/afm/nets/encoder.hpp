#pragma once

#include <cstddef>
#include <string>

#include "afm/nets/layers.hpp"
#include "afm/numcore/matrix.hpp"

namespace afm::nets {

struct EncoderSpec {
  std::size_t input_dim = 1;  // observation plus covariate dimension per step
  std::size_t hidden = 64;
  std::size_t layers = 2;
  std::size_t out_dim = 64;
};

// Bidirectional LSTM over a window of w steps. Windows are fed as B rows of
// w * input_dim values, step-major. The final states of both directions of
// the last layer are concatenated and projected to out_dim.
class ContextEncoder {
 public:
  ContextEncoder() = default;
  ContextEncoder(const EncoderSpec& spec, num::ParameterSet& params, num::Rng& rng,
                 const std::string& name = "encoder");

  const EncoderSpec& spec() const { return spec_; }
  num::Var record(num::Tape& tape, num::Var window, std::size_t w) const;

  // Rejects w = 0, width mismatch and non-finite entries.
  void check_window(const num::Matrix& window, std::size_t w) const;
  num::Matrix encode(const num::ParameterSet& params, const num::Matrix& window, std::size_t w) const;

 private:
  EncoderSpec spec_;
  BiLstm lstm_;
  Linear projection_;
};

}  // namespace afm::nets
