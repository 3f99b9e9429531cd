#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "afm/numcore/matrix.hpp"

namespace afm::ar {

// Sampled future trajectories for one forecast instance, in data units.
struct ForecastEnsemble {
  std::size_t instance_id = 0;
  std::size_t start = 0;  // absolute step index of the first forecast step
  std::size_t horizon = 0;
  std::size_t dim = 0;
  std::vector<num::Matrix> samples;       // kept paths, each horizon x dim
  std::vector<std::size_t> sample_ids;    // ids of the kept paths
  std::size_t failed = 0;                 // paths excluded for non-finite values
  std::string model_id;
  std::string dataset_id;
  std::uint64_t seed = 0;

  std::size_t size() const { return samples.size(); }
  // Per-(t, dim) ensemble mean.
  num::Matrix mean() const;
  // Samples at (t, d) across paths.
  std::vector<double> marginal(std::size_t t, std::size_t d) const;
};

struct QuantileTable {
  std::vector<double> levels;
  std::vector<num::Matrix> values;  // one horizon x dim matrix per level
};

// Linear interpolation between order statistics (h = (m - 1) p).
double empirical_quantile(std::span<const double> sorted, double level);
QuantileTable quantiles(const ForecastEnsemble& ensemble, std::span<const double> levels);

// forecast.csv: instance_id,sample_id,t,dim,value
// quantiles.csv: instance_id,t,dim,level,value
// t is the absolute step index, dim is 1-based.
void write_forecast_csv(const std::filesystem::path& path, std::span<const ForecastEnsemble> ensembles);
void write_quantiles_csv(const std::filesystem::path& path, std::span<const ForecastEnsemble> ensembles,
                         std::span<const double> levels);
std::vector<ForecastEnsemble> read_forecast_csv(const std::filesystem::path& path);

}  // namespace afm::ar
