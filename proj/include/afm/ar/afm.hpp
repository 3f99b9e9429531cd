#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "afm/ar/ensemble.hpp"
#include "afm/ar/model.hpp"
#include "afm/dynsys/dataset.hpp"
#include "afm/numcore/rng.hpp"

namespace afm::ar {

struct AfmConfig {
  std::size_t window = 75;
  std::size_t batch_size = 128;
  double lr = 0.003;
  std::size_t max_steps = 20000;
  std::uint64_t seed = 0;
  flow::FlowPathConfig flow;
  flow::OdeSamplerConfig sampler;
  std::size_t n_samples = 100;
  Architecture arch;
  // Window of the moving average used for the best-loss checkpoint.
  std::size_t smoothing = 100;
};

void validate(const AfmConfig& cfg);

struct TrainRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double wall_time = 0.0;  // seconds since training started
};

struct TrainOptions {
  std::function<void(const TrainRecord&)> on_step;
  std::size_t log_every = 0;  // 0 disables progress logging
};

struct TrainResult {
  AfmModel model;
  std::vector<TrainRecord> log;
  std::size_t best_step = 0;  // step whose smoothed loss was kept
  double best_smoothed_loss = 0.0;
};

enum class Provenance : std::uint8_t { kObserved, kGenerated };

// One teacher-forced training batch in standardized units.
struct TrainingBatch {
  num::Matrix window;      // B x (w * (n + c)), step-major
  num::Matrix covariates;  // B x c at the target step
  num::Matrix state;       // y^s
  num::Matrix embed;       // Fourier embedding of s
  num::Matrix target;      // y^1 - y^0
  std::vector<double> flow_step;
  std::vector<std::size_t> series;
  std::vector<std::size_t> time;
  std::vector<Provenance> window_provenance;  // B x w entries
};

// Draws (trajectory, t) pairs uniformly, t over the prediction segment
// [observe, observe + predict); pairs with fewer than w past steps are
// redrawn.
class BatchSampler {
 public:
  BatchSampler(const dyn::ForecastDataset& dataset, std::size_t window, const nets::FourierEmbedder& embedder,
               const flow::FlowPathConfig& flow);

  void sample(std::size_t batch, num::Rng& rng, TrainingBatch& out) const;

 private:
  std::vector<num::Matrix> series_;  // standardized states followed by covariates, per step
  std::size_t dim_;
  std::size_t covariate_dim_;
  std::size_t window_;
  std::size_t t_begin_;
  std::size_t t_end_;
  const nets::FourierEmbedder* embedder_;
  flow::FlowPathConfig flow_;
};

// Builds a fresh model from cfg and the dataset shape, then trains it.
// Step k draws its batch from stream derive_seed(cfg.seed, k).
TrainResult train(const dyn::ForecastDataset& dataset, const AfmConfig& cfg, const TrainOptions& options = {});

struct ForecastInput {
  std::size_t instance_id = 0;
  num::Matrix history;     // l x n, data units
  num::Matrix covariates;  // (l + horizon) x c, or empty when c = 0
};

// Rolling-window sampling of S paths per instance. Path j of an instance
// draws from stream derive_seed(derive_seed(seed, instance_id), j). Paths
// that turn non-finite are excluded from the ensemble and logged.
std::vector<ForecastEnsemble> forecast(const AfmModel& model, std::span<const ForecastInput> inputs,
                                       std::size_t horizon, std::size_t samples, std::uint64_t seed);
ForecastEnsemble forecast(const AfmModel& model, const num::Matrix& history, const num::Matrix& covariates,
                          std::size_t horizon, std::size_t samples, std::uint64_t seed);

// Forecast inputs for the test partition: history is the observation segment.
std::vector<ForecastInput> test_inputs(const dyn::ForecastDataset& dataset, std::size_t horizon);

}  // namespace afm::ar
