#include "afm/dynsys/simulate.hpp"

#include <algorithm>
#include <cmath>

namespace afm::dyn {

std::vector<double> equally_spaced_times(const SdeSystem& system) {
  std::vector<double> times(system.steps);
  const double span = system.t1 - system.t0;
  for (std::size_t k = 0; k < system.steps; ++k) {
    times[k] = system.t0 + span * static_cast<double>(k) / static_cast<double>(system.steps - 1);
  }
  return times;
}

Trajectory simulate(const SdeSystem& system, std::span<const double> x0, num::Rng& rng,
                    const SimulateOptions& options) {
  if (x0.size() != system.dim) {
    throw ValidationError("simulate: initial state has dimension " + std::to_string(x0.size()) +
                          ", system '" + system.name + "' expects " + std::to_string(system.dim));
  }
  if (system.steps < 2 || !(system.t1 > system.t0) || options.substeps == 0) {
    throw ValidationError("simulate: invalid time grid for system '" + system.name + "'");
  }
  const std::size_t n = system.dim;
  const double dt = (system.t1 - system.t0) / static_cast<double>(system.steps - 1) /
                    static_cast<double>(options.substeps);
  const double sqrt_dt = std::sqrt(dt);

  Trajectory traj;
  traj.times = equally_spaced_times(system);
  traj.states = num::Matrix(system.steps, n);
  std::vector<double> x(x0.begin(), x0.end()), noise(n), f0(n), pred(n), f1(n);
  std::copy(x.begin(), x.end(), traj.states.row(0).begin());

  auto f = [&system](std::span<const double> y, std::span<double> o) { drift(system, y, o); };
  std::size_t internal = 0;
  for (std::size_t k = 1; k < system.steps; ++k) {
    for (std::size_t sub = 0; sub < options.substeps; ++sub, ++internal) {
      for (std::size_t i = 0; i < n; ++i) noise[i] = system.diffusion[i] * sqrt_dt * rng.normal();
      euler_heun_step(f, std::span<double>(x), dt, noise, f0, pred, f1);
      if (system.state_floor) {
        for (double& v : x) v = std::max(v, *system.state_floor);
      }
      for (double v : x) {
        if (!std::isfinite(v) || std::abs(v) > options.divergence_threshold) {
          throw DivergenceError(internal, "simulate: state of '" + system.name +
                                              "' diverged at internal step " +
                                              std::to_string(internal));
        }
      }
    }
    std::copy(x.begin(), x.end(), traj.states.row(k).begin());
  }
  return traj;
}

Trajectory simulate(const SdeSystem& system, std::span<const double> x0, std::uint64_t seed,
                    const SimulateOptions& options) {
  num::Rng rng(seed);
  return simulate(system, x0, rng, options);
}

std::vector<double> sample_initial_condition(const SdeSystem& system, num::Rng& rng) {
  std::vector<double> x(system.dim);
  for (std::size_t i = 0; i < system.dim; ++i) {
    x[i] = rng.uniform(system.init_range[i].first, system.init_range[i].second);
  }
  return x;
}

}  // namespace afm::dyn
