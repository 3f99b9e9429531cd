#include "afm/dynsys/system.hpp"

#include <algorithm>

#include "afm/errors.hpp"

namespace afm::dyn {

double SdeSystem::param(std::string_view key) const {
  for (const auto& p : params) {
    if (p.name == key) return p.value;
  }
  throw ValidationError("system '" + name + "' has no parameter '" + std::string(key) + "'");
}

SdeSystem make_system(SystemKind kind) {
  SdeSystem s{.kind = kind};
  switch (kind) {
    case SystemKind::kLorenz:
      s.name = "lorenz";
      s.dim = 3;
      s.params = {{"sigma", 10.0}, {"rho", 28.0}, {"beta", 8.0 / 3.0}};
      s.init_range.assign(3, {0.0, 10.0});
      s.t1 = 2.0;
      break;
    case SystemKind::kFitzHughNagumo:
      s.name = "fitzhugh_nagumo";
      s.dim = 2;
      s.params = {{"a", 0.7}, {"b", 0.8}, {"tau", 12.5}, {"I", 0.5}};
      s.init_range.assign(2, {-2.0, 2.0});
      s.t1 = 10.0;
      break;
    case SystemKind::kLotkaVolterra:
      s.name = "lotka_volterra";
      s.dim = 2;
      s.params = {{"alpha", 1.3}, {"beta", 0.9}, {"gamma", 0.8}, {"delta", 1.8}};
      s.init_range.assign(2, {0.0, 5.0});
      s.t1 = 20.0;
      s.state_floor = 1e-9;
      break;
    case SystemKind::kBrusselator:
      s.name = "brusselator";
      s.dim = 2;
      s.params = {{"A", 1.0}, {"B", 3.0}};
      s.init_range.assign(2, {0.0, 2.0});
      s.t1 = 20.0;
      break;
    case SystemKind::kVanDerPol:
      s.name = "van_der_pol";
      s.dim = 2;
      s.params = {{"mu", 0.1}};
      s.init_range.assign(2, {-2.0, 2.0});
      s.t1 = 20.0;
      break;
  }
  s.t0 = 0.0;
  s.diffusion.assign(s.dim, 1.5);
  return s;
}

SdeSystem system_by_name(std::string_view name) {
  for (SystemKind k : all_systems()) {
    SdeSystem s = make_system(k);
    if (s.name == name) return s;
  }
  throw ValidationError("unknown system '" + std::string(name) +
                        "' (expected lorenz, fitzhugh_nagumo, lotka_volterra, brusselator, van_der_pol)");
}

std::vector<SystemKind> all_systems() {
  return {SystemKind::kLorenz, SystemKind::kFitzHughNagumo, SystemKind::kLotkaVolterra,
          SystemKind::kBrusselator, SystemKind::kVanDerPol};
}

void drift(const SdeSystem& s, std::span<const double> x, std::span<double> out) {
  const auto& p = s.params;
  switch (s.kind) {
    case SystemKind::kLorenz: {
      const double sigma = p[0].value, rho = p[1].value, beta = p[2].value;
      out[0] = sigma * (x[1] - x[0]);
      out[1] = x[0] * (rho - x[2]) - x[1];
      out[2] = x[0] * x[1] - beta * x[2];
      return;
    }
    case SystemKind::kFitzHughNagumo: {
      const double a = p[0].value, b = p[1].value, tau = p[2].value, input = p[3].value;
      out[0] = x[0] - x[0] * x[0] * x[0] / 3.0 - x[1] + input;
      out[1] = (x[0] + a - b * x[1]) / tau;
      return;
    }
    case SystemKind::kLotkaVolterra: {
      const double alpha = p[0].value, beta = p[1].value, gamma = p[2].value, delta = p[3].value;
      out[0] = alpha * x[0] - beta * x[0] * x[1];
      out[1] = -delta * x[1] + gamma * x[0] * x[1];
      return;
    }
    case SystemKind::kBrusselator: {
      const double a = p[0].value, b = p[1].value;
      out[0] = a + x[0] * x[0] * x[1] - (b + 1.0) * x[0];
      out[1] = b * x[0] - x[0] * x[0] * x[1];
      return;
    }
    case SystemKind::kVanDerPol: {
      const double mu = p[0].value;
      out[0] = x[1];
      out[1] = mu * (1.0 - x[0] * x[0]) * x[1] - x[0];
      return;
    }
  }
}

std::vector<double> drift(const SdeSystem& system, std::span<const double> x) {
  if (x.size() != system.dim) {
    throw ValidationError("drift: state has dimension " + std::to_string(x.size()) + ", system '" +
                          system.name + "' expects " + std::to_string(system.dim));
  }
  std::vector<double> out(system.dim);
  drift(system, x, out);
  return out;
}

std::vector<double> euler_heun_step(const SdeSystem& system, std::span<const double> x, double dt,
                                    std::span<const double> dW) {
  if (x.size() != system.dim || dW.size() != system.dim) {
    throw ValidationError("euler_heun_step: dimension mismatch for system '" + system.name + "'");
  }
  if (!(dt > 0.0)) throw ValidationError("euler_heun_step: dt must be positive");
  const std::size_t n = system.dim;
  std::vector<double> next(x.begin(), x.end()), noise(n), f0(n), pred(n), f1(n);
  for (std::size_t i = 0; i < n; ++i) noise[i] = system.diffusion[i] * dW[i];
  euler_heun_step([&](std::span<const double> y, std::span<double> o) { drift(system, y, o); },
                  std::span<double>(next), dt, noise, f0, pred, f1);
  if (system.state_floor) {
    for (double& v : next) v = std::max(v, *system.state_floor);
  }
  return next;
}

}  // namespace afm::dyn
