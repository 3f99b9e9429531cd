#include "afm/numcore/params.hpp"

#include <algorithm>
#include <cmath>

#include "afm/errors.hpp"

namespace afm::num {

ParamId ParameterSet::add(std::string name, Matrix init) {
  params_.push_back({std::move(name), std::move(init)});
  return params_.size() - 1;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::vector<double> ParameterSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(scalar_count());
  for (const auto& p : params_) {
    flat.insert(flat.end(), p.value.values().begin(), p.value.values().end());
  }
  return flat;
}

void ParameterSet::assign(std::span<const double> flat) {
  if (flat.size() != scalar_count()) {
    throw ValidationError("parameter vector has " + std::to_string(flat.size()) +
                          " values, model expects " + std::to_string(scalar_count()));
  }
  std::size_t offset = 0;
  for (auto& p : params_) {
    auto dst = p.value.values();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), dst.size(), dst.begin());
    offset += dst.size();
  }
}

GradientSet GradientSet::zeros_like(const ParameterSet& params) {
  GradientSet g;
  g.blocks.reserve(params.size());
  for (const auto& p : params) g.blocks.emplace_back(p.value.rows(), p.value.cols());
  return g;
}

void GradientSet::accumulate(const GradientSet& other) {
  if (other.blocks.size() != blocks.size()) {
    throw ValidationError("gradient sets differ in block count");
  }
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto dst = blocks[i].values();
    auto src = other.blocks[i].values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
}

void GradientSet::scale(double factor) {
  for (auto& b : blocks) {
    for (double& x : b.values()) x *= factor;
  }
}

double GradientSet::max_abs() const {
  double m = 0.0;
  for (const auto& b : blocks) {
    for (double x : b.values()) m = std::max(m, std::abs(x));
  }
  return m;
}

Matrix fan_in_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  Matrix m(rows, cols);
  for (double& x : m.values()) x = rng.uniform(-bound, bound);
  return m;
}

}  // namespace afm::num
