#include "afm/nets/fourier.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "afm/errors.hpp"

namespace afm::nets {

FourierEmbedder::FourierEmbedder(std::size_t out_dim) : out_dim_(out_dim) {
  if (out_dim == 0 || out_dim % 2 != 0) {
    throw ValidationError("Fourier embedding dimension must be even and positive, got " + std::to_string(out_dim));
  }
  for (std::size_t k = 0; k < out_dim / 2; ++k) {
    frequencies_.push_back(2.0 * std::numbers::pi * std::ldexp(1.0, static_cast<int>(k)));
  }
}

void FourierEmbedder::embed_into(double s, std::span<double> out) const {
  if (!(s >= 0.0 && s <= 1.0)) {
    throw ValidationError("flow step must lie in [0, 1], got " + std::to_string(s));
  }
  for (std::size_t k = 0; k < frequencies_.size(); ++k) {
    out[2 * k] = std::sin(frequencies_[k] * s);
    out[2 * k + 1] = std::cos(frequencies_[k] * s);
  }
}

std::vector<double> FourierEmbedder::embed(double s) const {
  std::vector<double> out(out_dim_);
  embed_into(s, out);
  return out;
}

num::Matrix FourierEmbedder::embed_rows(std::span<const double> steps) const {
  num::Matrix out(steps.size(), out_dim_);
  for (std::size_t r = 0; r < steps.size(); ++r) embed_into(steps[r], out.row(r));
  return out;
}

std::vector<double> fourier_embed(double s, std::size_t out_dim) { return FourierEmbedder(out_dim).embed(s); }

}  // namespace afm::nets
