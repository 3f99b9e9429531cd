#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "afm/numcore/matrix.hpp"

namespace afm::nets {

// Fixed-frequency embedding of the flow step s in [0, 1]:
//   (sin(2 pi 2^0 s), cos(2 pi 2^0 s), sin(2 pi 2^1 s), cos(2 pi 2^1 s), ...)
class FourierEmbedder {
 public:
  explicit FourierEmbedder(std::size_t out_dim = 16);

  std::size_t out_dim() const { return out_dim_; }
  const std::vector<double>& frequencies() const { return frequencies_; }

  std::vector<double> embed(double s) const;
  void embed_into(double s, std::span<double> out) const;
  // One embedding per row for a column of flow steps.
  num::Matrix embed_rows(std::span<const double> steps) const;

 private:
  std::size_t out_dim_;
  std::vector<double> frequencies_;
};

std::vector<double> fourier_embed(double s, std::size_t out_dim);

}  // namespace afm::nets
