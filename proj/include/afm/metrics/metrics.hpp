#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "afm/ar/ensemble.hpp"
#include "afm/dynsys/dataset.hpp"
#include "afm/numcore/matrix.hpp"

namespace afm::metrics {

// E|X - x| - E|X - X'| / 2 over the empirical distribution of the samples,
// i = j pairs included, which equals the integral of (F(y) - 1{y >= x})^2.
double crps_empirical(std::span<const double> samples, double x);

// crps_empirical per (t, dim), averaged over the horizon and dimensions.
// truth is horizon x dim.
double mean_crps(const ar::ForecastEnsemble& ensemble, const num::Matrix& truth);

// Per dimension: RMSE over the rows divided by the sample standard deviation
// of the truth column; averaged over dimensions.
double nrmse(const num::Matrix& point, const num::Matrix& truth);
// The per-dimension ratios behind nrmse().
std::vector<double> nrmse_by_dim(const num::Matrix& point, const num::Matrix& truth);

enum class Regime { kPrediction, kExtrapolation };

std::string_view regime_name(Regime r);
Regime parse_regime(std::string_view name);

// Absolute step range [begin, end) scored for a regime.
struct RegimeWindow {
  Regime regime;
  std::size_t begin = 0;
  std::size_t end = 0;
};

std::vector<RegimeWindow> regime_windows(const dyn::Split& split);

struct RegimeMetrics {
  Regime regime = Regime::kPrediction;
  double crps = 0.0;
  double nrmse = 0.0;
  std::vector<double> crps_by_dim;
  std::vector<double> nrmse_by_dim;
  std::vector<double> crps_by_step;  // one entry per step of the window
  std::size_t steps = 0;
};

// CRPS is computed on standardized values (dataset normalization), so it is
// comparable across dimensions; NRMSE is scale free. The point forecast for
// NRMSE is the per-(t, dim) ensemble mean.
struct MetricReport {
  std::vector<RegimeMetrics> regimes;
  std::size_t samples = 0;  // smallest kept ensemble size
  std::size_t instances = 0;
  std::vector<std::string> gaps;  // regimes the forecasts do not cover
  std::string crps_space = "standardized";

  const RegimeMetrics* find(Regime r) const;
};

// Scores every ensemble against the test trajectory with the same id. A
// regime that some ensemble does not fully cover is left out and listed in
// gaps.
MetricReport evaluate(std::span<const ar::ForecastEnsemble> ensembles, const dyn::ForecastDataset& dataset);

// One metrics.csv row. std_err holds the sample standard deviation across
// seeds and is empty for a single seed.
struct MetricRow {
  std::string model_kind;
  std::string system;
  std::string regime;
  std::string metric;
  double mean = 0.0;
  std::optional<double> std_err;
  std::size_t seed_count = 0;
};

// Mean and spread of each (regime, metric) over per-seed reports. Regimes
// missing from any report are dropped.
std::vector<MetricRow> aggregate(std::string_view model_kind, std::string_view system,
                                 std::span<const MetricReport> per_seed);

// Sample mean and standard deviation (ddof 1; nullopt for one value).
std::pair<double, std::optional<double>> mean_and_spread(std::span<const double> values);

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRow> rows);
std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path);

// Long-form breakdown: regime,metric,axis,index,value with axis dim or step.
std::string breakdown_csv(const MetricReport& report);

}  // namespace afm::metrics
