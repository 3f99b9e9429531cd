#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "afm/dynsys/system.hpp"
#include "afm/errors.hpp"
#include "afm/numcore/matrix.hpp"
#include "afm/numcore/rng.hpp"

namespace afm::dyn {

struct Trajectory {
  std::size_t id = 0;
  std::vector<double> times;  // `steps` equally spaced points in [t0, t1]
  num::Matrix states;         // steps x dim
  num::Matrix covariates;     // steps x c, empty when there are none
};

struct SimulateOptions {
  // Internal Euler-Heun steps per saved interval.
  std::size_t substeps = 4;
  double divergence_threshold = 1e6;
};

// Thrown when a state leaves the divergence threshold or turns non-finite.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(std::size_t internal_step, const std::string& what)
      : NumericalError(what), step(internal_step) {}
  std::size_t step;
};

std::vector<double> equally_spaced_times(const SdeSystem& system);

// Integrates from x0 on a grid `substeps` times finer than the saved grid and
// keeps every `substeps`-th state, x0 included. Noise increments are
// N(0, dt) per internal step, drawn from `rng` and scaled by the diffusion.
Trajectory simulate(const SdeSystem& system, std::span<const double> x0, num::Rng& rng,
                    const SimulateOptions& options = {});
Trajectory simulate(const SdeSystem& system, std::span<const double> x0, std::uint64_t seed,
                    const SimulateOptions& options = {});

std::vector<double> sample_initial_condition(const SdeSystem& system, num::Rng& rng);

}  // namespace afm::dyn
