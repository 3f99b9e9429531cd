#pragma once

#include <cstddef>

#include "afm/numcore/matrix.hpp"
#include "afm/numcore/rng.hpp"

namespace afm::fm {

// Brownian-motion covariance over f future steps, Sigma_ij = min(i, j) delta
// for i, j = 1..f. The trajectory covariance is block diagonal with one such
// block per observed dimension, so every operation below acts on the columns
// of an f x n trajectory independently.
class BrownianCovariance {
 public:
  BrownianCovariance(std::size_t f, double delta);
  // delta = 2 / (f + 1), which makes the diagonal average 1.
  static BrownianCovariance normalized(std::size_t f);

  std::size_t size() const { return f_; }
  double delta() const { return delta_; }
  const num::Matrix& matrix() const { return sigma_; }
  const num::Matrix& cholesky() const { return chol_; }
  const num::Matrix& inverse_cholesky() const { return chol_inv_; }

  num::Matrix apply(const num::Matrix& y) const;   // Sigma y
  num::Matrix solve(const num::Matrix& y) const;   // Sigma^-1 y
  num::Matrix whiten(const num::Matrix& y) const;  // L^-1 y
  // f x n draw from N(0, Sigma) per column.
  num::Matrix sample(std::size_t n, num::Rng& rng) const;

 private:
  std::size_t f_;
  double delta_;
  num::Matrix sigma_;
  num::Matrix chol_;
  num::Matrix chol_inv_;
};

}  // namespace afm::fm
