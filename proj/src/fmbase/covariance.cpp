#include "afm/fmbase/covariance.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cmath>

#include "afm/errors.hpp"

namespace afm::fm {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstView = Eigen::Map<const RowMajor>;
using View = Eigen::Map<RowMajor>;

ConstView view(const num::Matrix& m) {
  return ConstView(m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols()));
}

View view(num::Matrix& m) {
  return View(m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols()));
}

}  // namespace

BrownianCovariance::BrownianCovariance(std::size_t f, double delta)
    : f_(f), delta_(delta), sigma_(f, f), chol_(f, f), chol_inv_(f, f) {
  if (f == 0) throw ValidationError("covariance needs at least one step");
  if (!(delta > 0.0) || !std::isfinite(delta)) throw ValidationError("Brownian step variance must be positive");
  for (std::size_t i = 0; i < f; ++i) {
    for (std::size_t j = 0; j < f; ++j) sigma_(i, j) = static_cast<double>(std::min(i, j) + 1) * delta;
  }
  Eigen::LLT<RowMajor> llt(view(sigma_));
  if (llt.info() != Eigen::Success) throw NumericalError("Cholesky factorization of the trajectory covariance failed");
  view(chol_) = llt.matrixL();
  view(chol_inv_) = view(chol_).triangularView<Eigen::Lower>().solve(RowMajor::Identity(f, f));
}

BrownianCovariance BrownianCovariance::normalized(std::size_t f) {
  return BrownianCovariance(f, 2.0 / static_cast<double>(f + 1));
}

num::Matrix BrownianCovariance::apply(const num::Matrix& y) const {
  if (y.rows() != f_) throw ValidationError("covariance of size " + std::to_string(f_) + " applied to " + y.shape_string());
  num::Matrix out(y.rows(), y.cols());
  view(out).noalias() = view(sigma_) * view(y);
  return out;
}

num::Matrix BrownianCovariance::solve(const num::Matrix& y) const {
  if (y.rows() != f_) throw ValidationError("covariance of size " + std::to_string(f_) + " solved against " + y.shape_string());
  num::Matrix out(y.rows(), y.cols());
  RowMajor tmp = view(chol_).triangularView<Eigen::Lower>().solve(view(y));
  view(out) = view(chol_).transpose().triangularView<Eigen::Upper>().solve(tmp);
  return out;
}

num::Matrix BrownianCovariance::whiten(const num::Matrix& y) const {
  if (y.rows() != f_) throw ValidationError("covariance of size " + std::to_string(f_) + " whitening " + y.shape_string());
  num::Matrix out(y.rows(), y.cols());
  view(out) = view(chol_).triangularView<Eigen::Lower>().solve(view(y));
  return out;
}

num::Matrix BrownianCovariance::sample(std::size_t n, num::Rng& rng) const {
  num::Matrix z(f_, n);
  rng.fill_normal(z.values());
  num::Matrix out(f_, n);
  view(out).noalias() = view(chol_).triangularView<Eigen::Lower>() * view(z);
  return out;
}

}  // namespace afm::fm
