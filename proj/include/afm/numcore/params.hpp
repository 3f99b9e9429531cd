#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "afm/numcore/matrix.hpp"
#include "afm/numcore/rng.hpp"

namespace afm::num {

using ParamId = std::size_t;

struct Parameter {
  std::string name;
  Matrix value;
};

// Ordered set of named parameter blocks. Ids are stable indices; the order is
// also the on-disk order of the flat parameter file.
class ParameterSet {
 public:
  ParamId add(std::string name, Matrix init);

  Parameter& operator[](ParamId id) { return params_.at(id); }
  const Parameter& operator[](ParamId id) const { return params_.at(id); }
  std::size_t size() const { return params_.size(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  // Total number of scalar values across all blocks.
  std::size_t scalar_count() const;
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);

 private:
  std::vector<Parameter> params_;
};

// Gradient per parameter block, aligned with a ParameterSet.
struct GradientSet {
  std::vector<Matrix> blocks;

  static GradientSet zeros_like(const ParameterSet& params);
  void accumulate(const GradientSet& other);
  void scale(double factor);
  double max_abs() const;
};

// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Matrix fan_in_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng);

}  // namespace afm::num
