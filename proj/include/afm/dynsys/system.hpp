#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "afm/numcore/matrix.hpp"

namespace afm::dyn {

enum class SystemKind { kLorenz, kFitzHughNagumo, kLotkaVolterra, kBrusselator, kVanDerPol };

struct NamedValue {
  std::string name;
  double value;
};

// Drift, constant additive diffusion and initial-condition law of one
// benchmark SDE  dx = f(x; theta) dt + sigma dW.
struct SdeSystem {
  SystemKind kind;
  std::string name;
  std::size_t dim = 0;
  std::vector<NamedValue> params;  // fixed order, read positionally by drift()
  std::vector<double> diffusion;
  std::vector<std::pair<double, double>> init_range;
  double t0 = 0.0;
  double t1 = 1.0;
  std::size_t steps = 200;
  // Lower clamp applied after every step (Lotka-Volterra populations).
  std::optional<double> state_floor;

  double param(std::string_view key) const;
};

SdeSystem make_system(SystemKind kind);
// Accepts the canonical lower-case names ("lorenz", "fitzhugh_nagumo",
// "lotka_volterra", "brusselator", "van_der_pol"); throws ValidationError.
SdeSystem system_by_name(std::string_view name);
std::vector<SystemKind> all_systems();

void drift(const SdeSystem& system, std::span<const double> x, std::span<double> out);
std::vector<double> drift(const SdeSystem& system, std::span<const double> x);

// Additive-noise Euler-Heun step. `noise` is the already scaled increment
// sigma (.) dW and is shared by predictor and corrector:
//   x~ = x + f(x) dt + noise
//   x' = x + (f(x) + f(x~)) dt / 2 + noise
template <class Drift>
void euler_heun_step(Drift&& f, std::span<double> x, double dt, std::span<const double> noise,
                     std::span<double> scratch_f0, std::span<double> scratch_pred,
                     std::span<double> scratch_f1) {
  f(std::span<const double>(x), scratch_f0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    scratch_pred[i] = x[i] + scratch_f0[i] * dt + noise[i];
  }
  f(std::span<const double>(scratch_pred), scratch_f1);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] += 0.5 * (scratch_f0[i] + scratch_f1[i]) * dt + noise[i];
  }
}

// Convenience form on a system; returns the next state.
std::vector<double> euler_heun_step(const SdeSystem& system, std::span<const double> x, double dt,
                                    std::span<const double> dW);

}  // namespace afm::dyn
