#include "afm/flowpath/flowpath.hpp"

namespace afm::flow {

std::string_view method_name(OdeMethod method) { return method == OdeMethod::kEuler ? "euler" : "midpoint"; }

OdeMethod parse_method(std::string_view name) {
  if (name == "euler") return OdeMethod::kEuler;
  if (name == "midpoint") return OdeMethod::kMidpoint;
  throw ValidationError("unknown ODE method '" + std::string(name) + "' (expected euler or midpoint)");
}

void validate(const FlowPathConfig& cfg) {
  if (!(cfg.sigma_path >= 0.0) || !std::isfinite(cfg.sigma_path)) {
    throw ValidationError("sigma_path must be finite and non-negative");
  }
}

void validate(const OdeSamplerConfig& cfg) {
  if (cfg.n_steps == 0) throw ValidationError("ODE sampler needs at least one step");
}

std::vector<double> interpolant_sample(std::span<const double> y0, std::span<const double> y1, double s,
                                       const FlowPathConfig& cfg, num::Rng& rng) {
  num::Matrix a(1, y0.size(), std::vector<double>(y0.begin(), y0.end()));
  num::Matrix b(1, y1.size(), std::vector<double>(y1.begin(), y1.end()));
  const double steps[1] = {s};
  num::Matrix out = interpolant_rows(a, b, steps, cfg, rng);
  return {out.values().begin(), out.values().end()};
}

num::Matrix interpolant_rows(const num::Matrix& y0, const num::Matrix& y1, std::span<const double> s,
                             const FlowPathConfig& cfg, num::Rng& rng) {
  validate(cfg);
  if (!y0.same_shape(y1) || s.size() != y0.rows()) {
    throw ValidationError("interpolant endpoints " + y0.shape_string() + " and " + y1.shape_string() +
                          " with " + std::to_string(s.size()) + " flow steps");
  }
  num::Matrix out(y0.rows(), y0.cols());
  for (std::size_t r = 0; r < y0.rows(); ++r) {
    if (!(s[r] >= 0.0 && s[r] <= 1.0)) throw ValidationError("flow step must lie in [0, 1]");
    for (std::size_t c = 0; c < y0.cols(); ++c) {
      double v = (1.0 - s[r]) * y0(r, c) + s[r] * y1(r, c);
      if (cfg.sigma_path > 0.0) v += cfg.sigma_path * rng.normal();
      out(r, c) = v;
    }
  }
  return out;
}

std::vector<double> velocity_target(std::span<const double> y0, std::span<const double> y1) {
  if (y0.size() != y1.size()) throw ValidationError("velocity target endpoints differ in size");
  std::vector<double> out(y0.size());
  for (std::size_t i = 0; i < y0.size(); ++i) out[i] = y1[i] - y0[i];
  return out;
}

num::Matrix velocity_target_rows(const num::Matrix& y0, const num::Matrix& y1) {
  if (!y0.same_shape(y1)) throw ValidationError("velocity target endpoints differ in shape");
  num::Matrix out(y0.rows(), y0.cols());
  auto a = y0.values();
  auto b = y1.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = b[i] - a[i];
  return out;
}

}  // namespace afm::flow
