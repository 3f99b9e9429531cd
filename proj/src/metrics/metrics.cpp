#include "afm/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "afm/errors.hpp"
#include "afm/util/log.hpp"
#include "afm/util/parallel.hpp"
#include "afm/util/text.hpp"

namespace afm::metrics {
namespace {

constexpr std::string_view kHeader = "model_kind,system,regime,metric,mean,std_err,seed_count";

// Sorted-sample CRPS: with 1-based ranks i, E|X - X'| / 2 = sum (2i - m - 1) x_(i) / m^2.
// The weights sum to zero, so samples are taken relative to x, which keeps a
// perfect ensemble at exactly 0.
double crps_sorted(std::span<const double> sorted, double x) {
  const double m = static_cast<double>(sorted.size());
  double abs_dev = 0.0;
  double spread = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double r = sorted[i] - x;
    abs_dev += std::abs(r);
    spread += (2.0 * static_cast<double>(i + 1) - m - 1.0) * r;
  }
  return abs_dev / m - spread / (m * m);
}

void check_same_shape(const num::Matrix& a, const num::Matrix& b, std::string_view what) {
  if (!a.same_shape(b)) {
    throw ValidationError(std::string(what) + ": shapes " + a.shape_string() + " and " + b.shape_string() +
                          " differ");
  }
}

struct InstanceScore {
  std::vector<double> crps_by_dim;
  std::vector<double> crps_by_step;
  std::vector<double> nrmse_by_dim;
};

}  // namespace

double crps_empirical(std::span<const double> samples, double x) {
  if (samples.size() < 2) throw ValidationError("CRPS needs at least 2 samples, got " + std::to_string(samples.size()));
  if (!std::isfinite(x)) throw ValidationError("CRPS observation is not finite");
  std::vector<double> sorted(samples.begin(), samples.end());
  for (double v : sorted) {
    if (!std::isfinite(v)) throw ValidationError("CRPS sample is not finite");
  }
  std::sort(sorted.begin(), sorted.end());
  return std::max(0.0, crps_sorted(sorted, x));
}

double mean_crps(const ar::ForecastEnsemble& ensemble, const num::Matrix& truth) {
  if (truth.rows() != ensemble.horizon || truth.cols() != ensemble.dim) {
    throw ValidationError("mean_crps: truth " + truth.shape_string() + " does not match ensemble " +
                          num::shape_string(ensemble.horizon, ensemble.dim));
  }
  double acc = 0.0;
  for (std::size_t t = 0; t < ensemble.horizon; ++t) {
    for (std::size_t d = 0; d < ensemble.dim; ++d) acc += crps_empirical(ensemble.marginal(t, d), truth(t, d));
  }
  return acc / static_cast<double>(ensemble.horizon * ensemble.dim);
}

std::vector<double> nrmse_by_dim(const num::Matrix& point, const num::Matrix& truth) {
  check_same_shape(point, truth, "nrmse");
  const std::size_t rows = truth.rows();
  if (rows < 2) throw ValidationError("nrmse needs at least 2 steps to estimate the truth spread");
  std::vector<double> out(truth.cols());
  for (std::size_t d = 0; d < truth.cols(); ++d) {
    double mean = 0.0;
    for (std::size_t t = 0; t < rows; ++t) mean += truth(t, d);
    mean /= static_cast<double>(rows);
    double var = 0.0, sq = 0.0;
    for (std::size_t t = 0; t < rows; ++t) {
      const double c = truth(t, d) - mean;
      const double e = point(t, d) - truth(t, d);
      var += c * c;
      sq += e * e;
    }
    const double sd = std::sqrt(var / static_cast<double>(rows - 1));
    if (!(sd > 0.0)) {
      throw ValidationError("nrmse: truth is constant in dimension " + std::to_string(d + 1));
    }
    out[d] = std::sqrt(sq / static_cast<double>(rows)) / sd;
  }
  return out;
}

double nrmse(const num::Matrix& point, const num::Matrix& truth) {
  const auto per_dim = nrmse_by_dim(point, truth);
  double acc = 0.0;
  for (double v : per_dim) acc += v;
  return acc / static_cast<double>(per_dim.size());
}

std::string_view regime_name(Regime r) { return r == Regime::kPrediction ? "prediction" : "extrapolation"; }

Regime parse_regime(std::string_view name) {
  if (name == "prediction") return Regime::kPrediction;
  if (name == "extrapolation") return Regime::kExtrapolation;
  throw ValidationError("unknown regime '" + std::string(name) + "'");
}

std::vector<RegimeWindow> regime_windows(const dyn::Split& split) {
  std::vector<RegimeWindow> out;
  const std::size_t p0 = split.observe;
  const std::size_t p1 = p0 + split.predict;
  if (split.predict > 0) out.push_back({Regime::kPrediction, p0, p1});
  if (split.extrapolate > 0) out.push_back({Regime::kExtrapolation, p1, p1 + split.extrapolate});
  return out;
}

const RegimeMetrics* MetricReport::find(Regime r) const {
  for (const auto& m : regimes) {
    if (m.regime == r) return &m;
  }
  return nullptr;
}

MetricReport evaluate(std::span<const ar::ForecastEnsemble> ensembles, const dyn::ForecastDataset& dataset) {
  if (ensembles.empty()) throw ValidationError("no forecast ensembles to evaluate");
  std::map<std::size_t, const dyn::Trajectory*> by_id;
  for (const auto& traj : dataset.test) by_id[traj.id] = &traj;
  const std::size_t n = dataset.dim;
  MetricReport report;
  report.instances = ensembles.size();
  report.samples = SIZE_MAX;
  std::vector<const dyn::Trajectory*> truth(ensembles.size());
  for (std::size_t i = 0; i < ensembles.size(); ++i) {
    const auto& e = ensembles[i];
    const auto it = by_id.find(e.instance_id);
    if (it == by_id.end()) {
      throw ValidationError("forecast instance " + std::to_string(e.instance_id) + " is not a test trajectory");
    }
    if (e.dim != n) {
      throw ValidationError("forecast instance " + std::to_string(e.instance_id) + " has dimension " +
                            std::to_string(e.dim) + ", dataset has " + std::to_string(n));
    }
    if (e.size() < 2) {
      throw ValidationError("forecast instance " + std::to_string(e.instance_id) + " kept " + std::to_string(e.size()) +
                            " sample paths; scoring needs at least 2");
    }
    truth[i] = it->second;
    report.samples = std::min(report.samples, e.size());
  }

  for (const auto& window : regime_windows(dataset.split)) {
    const std::string name(regime_name(window.regime));
    const bool covered = std::all_of(ensembles.begin(), ensembles.end(), [&](const ar::ForecastEnsemble& e) {
      return e.start <= window.begin && e.start + e.horizon >= window.end;
    });
    if (!covered) {
      report.gaps.push_back(name);
      util::log_warn("forecasts do not cover the " + name + " window [" + std::to_string(window.begin) + ", " +
                     std::to_string(window.end) + "); " + name + " metrics are omitted");
      continue;
    }
    const std::size_t len = window.end - window.begin;
    std::vector<InstanceScore> scores(ensembles.size());
    util::parallel_for(ensembles.size(), [&](std::size_t i) {
      const auto& e = ensembles[i];
      const auto& traj = *truth[i];
      if (traj.states.rows() < window.end) {
        throw ValidationError("test trajectory " + std::to_string(traj.id) + " ends before step " +
                              std::to_string(window.end));
      }
      const std::size_t off = window.begin - e.start;
      InstanceScore& s = scores[i];
      s.crps_by_dim.assign(n, 0.0);
      s.crps_by_step.assign(len, 0.0);
      num::Matrix point(len, n), obs(len, n);
      std::vector<double> marginal(e.size());
      for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t d = 0; d < n; ++d) {
          const double mu = dataset.normalization.mean[d];
          const double sd = dataset.normalization.stddev[d];
          // Deviations from the first path keep the mean exact for identical paths.
          const double first = e.samples[0](off + t, d);
          double dev = 0.0;
          for (std::size_t j = 0; j < e.size(); ++j) {
            const double v = e.samples[j](off + t, d);
            dev += v - first;
            marginal[j] = (v - mu) / sd;
          }
          point(t, d) = first + dev / static_cast<double>(e.size());
          obs(t, d) = traj.states(window.begin + t, d);
          const double c = crps_empirical(marginal, (obs(t, d) - mu) / sd);
          s.crps_by_dim[d] += c / static_cast<double>(len);
          s.crps_by_step[t] += c / static_cast<double>(n);
        }
      }
      try {
        s.nrmse_by_dim = nrmse_by_dim(point, obs);
      } catch (const ValidationError& err) {
        throw ValidationError("test trajectory " + std::to_string(traj.id) + ", " + name + " window: " + err.what());
      }
    });

    RegimeMetrics m;
    m.regime = window.regime;
    m.steps = len;
    m.crps_by_dim.assign(n, 0.0);
    m.nrmse_by_dim.assign(n, 0.0);
    m.crps_by_step.assign(len, 0.0);
    const double count = static_cast<double>(ensembles.size());
    for (const auto& s : scores) {
      for (std::size_t d = 0; d < n; ++d) {
        m.crps_by_dim[d] += s.crps_by_dim[d] / count;
        m.nrmse_by_dim[d] += s.nrmse_by_dim[d] / count;
      }
      for (std::size_t t = 0; t < len; ++t) m.crps_by_step[t] += s.crps_by_step[t] / count;
    }
    for (std::size_t d = 0; d < n; ++d) {
      m.crps += m.crps_by_dim[d] / static_cast<double>(n);
      m.nrmse += m.nrmse_by_dim[d] / static_cast<double>(n);
    }
    report.regimes.push_back(std::move(m));
  }
  return report;
}

std::pair<double, std::optional<double>> mean_and_spread(std::span<const double> values) {
  if (values.empty()) throw ValidationError("no values to summarize");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (values.size() == 1) return {mean, std::nullopt};
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / static_cast<double>(values.size() - 1))};
}

std::vector<MetricRow> aggregate(std::string_view model_kind, std::string_view system,
                                 std::span<const MetricReport> per_seed) {
  std::vector<MetricRow> rows;
  if (per_seed.empty()) return rows;
  for (Regime r : {Regime::kPrediction, Regime::kExtrapolation}) {
    std::vector<double> crps, nrmse_values;
    for (const auto& report : per_seed) {
      const RegimeMetrics* m = report.find(r);
      if (m == nullptr) break;
      crps.push_back(m->crps);
      nrmse_values.push_back(m->nrmse);
    }
    if (crps.size() != per_seed.size()) continue;
    for (const auto& [metric, values] : {std::pair{"crps", &crps}, std::pair{"nrmse", &nrmse_values}}) {
      const auto [mean, spread] = mean_and_spread(*values);
      rows.push_back({std::string(model_kind), std::string(system), std::string(regime_name(r)), metric, mean, spread,
                      values->size()});
    }
  }
  return rows;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRow> rows) {
  std::string out(kHeader);
  out += '\n';
  for (const auto& r : rows) {
    out += r.model_kind + ',' + r.system + ',' + r.regime + ',' + r.metric + ',' + util::format_double(r.mean) + ',' +
           (r.std_err ? util::format_double(*r.std_err) : std::string()) + ',' + std::to_string(r.seed_count) + '\n';
  }
  util::write_file(path, out);
}

std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path) {
  std::istringstream in(util::read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != kHeader) throw ValidationError(path.string() + ": unexpected header");
  std::vector<MetricRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = util::split(line, ',');
    if (f.size() != 7) throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": expected 7 fields");
    MetricRow r{std::string(f[0]), std::string(f[1]), std::string(f[2]), std::string(f[3]),
                util::parse_double(f[4]), std::nullopt, static_cast<std::size_t>(util::parse_uint(f[6]))};
    if (!f[5].empty()) r.std_err = util::parse_double(f[5]);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string breakdown_csv(const MetricReport& report) {
  std::string out = "regime,metric,axis,index,value\n";
  for (const auto& m : report.regimes) {
    const std::string regime(regime_name(m.regime));
    for (std::size_t d = 0; d < m.crps_by_dim.size(); ++d) {
      out += regime + ",crps,dim," + std::to_string(d + 1) + ',' + util::format_double(m.crps_by_dim[d]) + '\n';
    }
    for (std::size_t d = 0; d < m.nrmse_by_dim.size(); ++d) {
      out += regime + ",nrmse,dim," + std::to_string(d + 1) + ',' + util::format_double(m.nrmse_by_dim[d]) + '\n';
    }
    for (std::size_t t = 0; t < m.crps_by_step.size(); ++t) {
      out += regime + ",crps,step," + std::to_string(t + 1) + ',' + util::format_double(m.crps_by_step[t]) + '\n';
    }
  }
  return out;
}

}  // namespace afm::metrics
