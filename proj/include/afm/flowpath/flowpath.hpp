#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "afm/errors.hpp"
#include "afm/numcore/matrix.hpp"
#include "afm/numcore/rng.hpp"

namespace afm::flow {

// Straight conditional paths from an N(0, I) base, independent coupling.
struct FlowPathConfig {
  double sigma_path = 1e-4;
};

enum class OdeMethod { kEuler, kMidpoint };

struct OdeSamplerConfig {
  OdeMethod method = OdeMethod::kEuler;
  std::size_t n_steps = 16;
};

std::string_view method_name(OdeMethod method);
OdeMethod parse_method(std::string_view name);
void validate(const FlowPathConfig& cfg);
void validate(const OdeSamplerConfig& cfg);

// Draw from N((1 - s) y0 + s y1, sigma_path^2 I).
std::vector<double> interpolant_sample(std::span<const double> y0, std::span<const double> y1, double s,
                                       const FlowPathConfig& cfg, num::Rng& rng);
// Row-wise version with one flow step per row.
num::Matrix interpolant_rows(const num::Matrix& y0, const num::Matrix& y1, std::span<const double> s,
                             const FlowPathConfig& cfg, num::Rng& rng);

std::vector<double> velocity_target(std::span<const double> y0, std::span<const double> y1);
num::Matrix velocity_target_rows(const num::Matrix& y0, const num::Matrix& y1);

// Fixed-step integration of dy/ds = field(y, s) from s = 0 to 1. Rows of y
// are independent states; field maps a matrix of states to velocities.
//
// With failed == nullptr a non-finite state raises NumericalError naming the
// step. Otherwise rows that become non-finite are flagged in *failed and the
// remaining rows finish normally.
template <class Field>
num::Matrix ode_sample(Field&& field, num::Matrix y, const OdeSamplerConfig& cfg,
                       std::vector<char>* failed = nullptr) {
  validate(cfg);
  const double ds = 1.0 / static_cast<double>(cfg.n_steps);
  if (failed != nullptr) failed->assign(y.rows(), 0);
  for (std::size_t k = 0; k < cfg.n_steps; ++k) {
    const double s = static_cast<double>(k) * ds;
    num::Matrix v = field(static_cast<const num::Matrix&>(y), s);
    if (cfg.method == OdeMethod::kMidpoint) {
      num::Matrix mid = y;
      auto mv = mid.values();
      auto vv = v.values();
      for (std::size_t i = 0; i < mv.size(); ++i) mv[i] += 0.5 * ds * vv[i];
      v = field(static_cast<const num::Matrix&>(mid), s + 0.5 * ds);
    }
    auto yv = y.values();
    auto vv = v.values();
    if (vv.size() != yv.size()) throw ValidationError("velocity field changed the state shape");
    for (std::size_t i = 0; i < yv.size(); ++i) yv[i] += ds * vv[i];
    for (std::size_t r = 0; r < y.rows(); ++r) {
      bool finite = true;
      for (double x : y.row(r)) finite = finite && std::isfinite(x);
      if (finite) continue;
      if (failed == nullptr) {
        throw NumericalError("ODE sampler produced a non-finite state at step " + std::to_string(k + 1) + " of " +
                             std::to_string(cfg.n_steps) + " (row " + std::to_string(r) + ")");
      }
      (*failed)[r] = 1;
    }
  }
  return y;
}

// Single-state convenience wrapper; field maps a vector to a vector.
template <class Field>
std::vector<double> ode_sample_vector(Field&& field, std::span<const double> y0, const OdeSamplerConfig& cfg) {
  num::Matrix y(1, y0.size(), std::vector<double>(y0.begin(), y0.end()));
  auto row_field = [&](const num::Matrix& state, double s) {
    const auto row = state.row(0);
    std::vector<double> v = field(std::vector<double>(row.begin(), row.end()), s);
    const std::size_t n = v.size();
    return num::Matrix(1, n, std::move(v));
  };
  num::Matrix out = ode_sample(row_field, std::move(y), cfg);
  return {out.values().begin(), out.values().end()};
}

}  // namespace afm::flow
