#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "afm/dynsys/simulate.hpp"
#include "afm/dynsys/system.hpp"
#include "afm/numcore/matrix.hpp"

namespace afm::dyn {

struct Split {
  std::size_t observe = 75;
  std::size_t predict = 75;
  std::size_t extrapolate = 50;

  std::size_t total() const { return observe + predict + extrapolate; }
};

// Per-dimension standardization, fitted on training data only.
struct Normalization {
  std::vector<double> mean;
  std::vector<double> stddev;

  num::Matrix normalize(const num::Matrix& raw) const;
  num::Matrix denormalize(const num::Matrix& standardized) const;
  // Stable content id used to check model/dataset compatibility.
  std::string id() const;
};

struct ForecastDataset {
  std::string system;  // benchmark name, or "custom" for ingested data
  std::vector<NamedValue> params;
  std::vector<double> diffusion;
  std::size_t dim = 0;
  std::size_t covariate_dim = 0;
  std::size_t steps = 0;
  Split split;
  std::vector<Trajectory> train;
  std::vector<Trajectory> test;
  Normalization normalization;
  std::uint64_t seed = 0;
  std::size_t rejected = 0;
};

struct GenerateOptions {
  SimulateOptions simulate;
  Split split;
  // Abort when more than this fraction of simulations diverge.
  double max_rejection_rate = 0.01;
};

// Simulates n_train + n_test trajectories. Trajectory i draws its initial
// condition and noise from stream derive_seed(seed, i); ids 0..n_train-1
// form the training partition. Diverged simulations are redrawn from the
// same stream and counted.
ForecastDataset generate_dataset(const SdeSystem& system, std::size_t n_train, std::size_t n_test,
                                 std::uint64_t seed, const GenerateOptions& options = {});

// Mean and sample standard deviation over steps [0, observe + predict) of the
// training trajectories. A zero deviation is replaced by 1.
Normalization fit_normalization(std::span<const Trajectory> train, const Split& split);

// Directory layout: meta.json, train.csv, test.csv. CSV rows are
// trajectory_id,step_index,t,x_1..x_n[,c_1..c_k] with a header row.
void save_dataset(const ForecastDataset& dataset, const std::filesystem::path& dir);
ForecastDataset load_dataset(const std::filesystem::path& dir);
std::string dataset_id(const std::filesystem::path& dir);

}  // namespace afm::dyn
