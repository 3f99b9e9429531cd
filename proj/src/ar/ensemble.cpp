#include "afm/ar/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "afm/errors.hpp"
#include "afm/util/text.hpp"

namespace afm::ar {

num::Matrix ForecastEnsemble::mean() const {
  num::Matrix out(horizon, dim);
  if (samples.empty()) throw ValidationError("ensemble for instance " + std::to_string(instance_id) + " is empty");
  for (const auto& s : samples) {
    auto o = out.values();
    auto v = s.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += v[i];
  }
  for (double& v : out.values()) v /= static_cast<double>(samples.size());
  return out;
}

std::vector<double> ForecastEnsemble::marginal(std::size_t t, std::size_t d) const {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s(t, d));
  return out;
}

double empirical_quantile(std::span<const double> sorted, double level) {
  if (sorted.size() < 2) throw ValidationError("quantiles need at least 2 samples");
  if (!(level > 0.0 && level < 1.0)) throw ValidationError("quantile level must lie in (0, 1)");
  const double h = static_cast<double>(sorted.size() - 1) * level;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

QuantileTable quantiles(const ForecastEnsemble& ensemble, std::span<const double> levels) {
  if (ensemble.size() < 2) throw ValidationError("quantiles need at least 2 samples, ensemble has " + std::to_string(ensemble.size()));
  for (std::size_t k = 0; k < levels.size(); ++k) {
    if (!(levels[k] > 0.0 && levels[k] < 1.0)) throw ValidationError("quantile level must lie in (0, 1)");
    if (k > 0 && levels[k] <= levels[k - 1]) throw ValidationError("quantile levels must be strictly increasing");
  }
  QuantileTable table{{levels.begin(), levels.end()}, {}};
  table.values.assign(levels.size(), num::Matrix(ensemble.horizon, ensemble.dim));
  for (std::size_t t = 0; t < ensemble.horizon; ++t) {
    for (std::size_t d = 0; d < ensemble.dim; ++d) {
      auto column = ensemble.marginal(t, d);
      std::sort(column.begin(), column.end());
      for (std::size_t k = 0; k < levels.size(); ++k) table.values[k](t, d) = empirical_quantile(column, levels[k]);
    }
  }
  return table;
}

void write_forecast_csv(const std::filesystem::path& path, std::span<const ForecastEnsemble> ensembles) {
  std::string out = "instance_id,sample_id,t,dim,value\n";
  for (const auto& e : ensembles) {
    for (std::size_t k = 0; k < e.samples.size(); ++k) {
      const std::string prefix = std::to_string(e.instance_id) + "," + std::to_string(e.sample_ids[k]) + ",";
      for (std::size_t t = 0; t < e.horizon; ++t) {
        for (std::size_t d = 0; d < e.dim; ++d) {
          out += prefix + std::to_string(e.start + t) + "," + std::to_string(d + 1) + "," +
                 util::format_double(e.samples[k](t, d)) + "\n";
        }
      }
    }
  }
  util::write_file(path, out);
}

void write_quantiles_csv(const std::filesystem::path& path, std::span<const ForecastEnsemble> ensembles,
                         std::span<const double> levels) {
  std::string out = "instance_id,t,dim,level,value\n";
  for (const auto& e : ensembles) {
    const QuantileTable table = quantiles(e, levels);
    for (std::size_t t = 0; t < e.horizon; ++t) {
      for (std::size_t d = 0; d < e.dim; ++d) {
        for (std::size_t k = 0; k < levels.size(); ++k) {
          out += std::to_string(e.instance_id) + "," + std::to_string(e.start + t) + "," + std::to_string(d + 1) +
                 "," + util::format_double(levels[k]) + "," + util::format_double(table.values[k](t, d)) + "\n";
        }
      }
    }
  }
  util::write_file(path, out);
}

std::vector<ForecastEnsemble> read_forecast_csv(const std::filesystem::path& path) {
  struct Cell {
    std::size_t t, d;
    double v;
  };
  // instance -> sample -> cells
  std::map<std::size_t, std::map<std::size_t, std::vector<Cell>>> rows;
  std::istringstream in(util::read_file(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      if (line != "instance_id,sample_id,t,dim,value") throw ValidationError(path.string() + ": unexpected header");
      continue;
    }
    if (line.empty()) continue;
    const auto f = util::split(line, ',');
    if (f.size() != 5) throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": expected 5 fields");
    const auto dim = util::parse_uint(f[3]);
    if (dim == 0) throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": dim is 1-based");
    rows[util::parse_uint(f[0])][util::parse_uint(f[1])].push_back(
        {static_cast<std::size_t>(util::parse_uint(f[2])), static_cast<std::size_t>(dim - 1), util::parse_double(f[4])});
  }
  std::vector<ForecastEnsemble> out;
  for (auto& [instance, samples] : rows) {
    ForecastEnsemble e;
    e.instance_id = instance;
    std::size_t t_min = SIZE_MAX, t_max = 0;
    for (const auto& [id, cells] : samples) {
      for (const auto& c : cells) {
        t_min = std::min(t_min, c.t);
        t_max = std::max(t_max, c.t);
        e.dim = std::max(e.dim, c.d + 1);
      }
    }
    e.start = t_min;
    e.horizon = t_max - t_min + 1;
    for (const auto& [id, cells] : samples) {
      if (cells.size() != e.horizon * e.dim) {
        throw ValidationError(path.string() + ": instance " + std::to_string(instance) + " sample " +
                              std::to_string(id) + " has " + std::to_string(cells.size()) + " values, expected " +
                              std::to_string(e.horizon * e.dim));
      }
      num::Matrix m(e.horizon, e.dim, std::nan(""));
      for (const auto& c : cells) m(c.t - e.start, c.d) = c.v;
      if (!m.all_finite()) throw ValidationError(path.string() + ": instance " + std::to_string(instance) + " has gaps");
      e.samples.push_back(std::move(m));
      e.sample_ids.push_back(id);
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace afm::ar
