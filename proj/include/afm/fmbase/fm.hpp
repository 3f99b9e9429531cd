#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "afm/ar/afm.hpp"
#include "afm/fmbase/covariance.hpp"
#include "afm/nets/layers.hpp"

namespace afm::fm {

struct BaselinePathConfig {
  double sigma_bridge = 0.1;
};

// Draw from N((1 - s) Y0 + s Y1, sigma_bridge^2 s (1 - s) Sigma).
num::Matrix bridge_sample(const num::Matrix& y0, const num::Matrix& y1, double s, const BrownianCovariance& cov,
                          const BaselinePathConfig& cfg, num::Rng& rng);

// Y1 - Y0 + sigma_bridge^2 (1 - 2s) / 2 Sigma^-1 (Y - m_s).
num::Matrix fm_velocity_target(const num::Matrix& y, const num::Matrix& y0, const num::Matrix& y1, double s,
                               const BrownianCovariance& cov, const BaselinePathConfig& cfg);

struct FmArchitecture {
  std::size_t encoder_hidden = 64;
  std::size_t encoder_layers = 2;
  std::size_t context_dim = 64;
  std::size_t seq_hidden = 128;
  std::size_t seq_layers = 4;
  std::size_t embed_dim = 16;
};

struct FmConfig {
  std::size_t window = 75;
  std::size_t batch_size = 128;
  double lr = 0.003;
  std::size_t max_steps = 20000;
  std::uint64_t seed = 0;
  BaselinePathConfig path;
  flow::OdeSamplerConfig sampler;
  std::size_t n_samples = 100;
  FmArchitecture arch;
  std::size_t smoothing = 100;
  // Sigma^-1-weighted regression norm; false gives the plain squared norm.
  bool weighted_loss = true;
};

void validate(const FmConfig& cfg);

struct FmSpec {
  std::size_t dim = 1;
  std::size_t covariate_dim = 0;
  std::size_t window = 75;
  std::size_t horizon = 75;  // fixed output length f
  FmArchitecture arch;
  BaselinePathConfig path;
  flow::OdeSamplerConfig sampler;
  bool weighted_loss = true;
  dyn::Normalization normalization;
  std::string dataset_id;
};

// Context encoder over the history window plus a bidirectional LSTM that
// maps a whole f-step trajectory state to its velocity. The context and flow
// step enter the first LSTM layer as a per-sequence gate offset.
class FmModel {
 public:
  explicit FmModel(FmSpec spec, std::uint64_t init_seed = 0);

  const FmSpec& spec() const { return spec_; }
  void set_dataset_id(std::string id) { spec_.dataset_id = std::move(id); }
  num::ParameterSet& params() { return params_; }
  const num::ParameterSet& params() const { return params_; }
  const BrownianCovariance& covariance() const { return cov_; }
  const nets::FourierEmbedder& embedder() const { return embedder_; }
  std::size_t step_width() const { return spec_.dim + spec_.covariate_dim; }

  // history: B x (w * (n + c)); state: B x (f * n) step-major; covariates:
  // B x (f * c) for the future steps (invalid when c = 0); embed: B x E.
  num::Var record(num::Tape& tape, num::Var history, num::Var state, num::Var covariates, num::Var embed) const;
  num::Var record_context(num::Tape& tape, num::Var history) const;
  num::Var record_velocity(num::Tape& tape, num::Var context, num::Var state, num::Var covariates,
                           num::Var embed) const;

  std::string id() const;
  void save(const std::filesystem::path& dir) const;
  static FmModel load(const std::filesystem::path& dir);

 private:
  FmSpec spec_;
  num::ParameterSet params_;
  BrownianCovariance cov_;
  nets::ContextEncoder encoder_;
  nets::Linear forward_offset_;
  nets::Linear backward_offset_;
  nets::BiLstm sequence_;
  nets::Linear output_;
  nets::FourierEmbedder embedder_;
};

struct FmTrainResult {
  FmModel model;
  std::vector<ar::TrainRecord> log;
  std::size_t best_step = 0;
  double best_smoothed_loss = 0.0;
};

// Training pairs are (history window before the prediction segment, the f
// steps of the prediction segment) of uniformly drawn training trajectories.
FmTrainResult fm_train(const dyn::ForecastDataset& dataset, const FmConfig& cfg, const ar::TrainOptions& options = {});

// One joint draw of the f future steps per sample path; path j of an instance
// uses stream derive_seed(derive_seed(seed, instance_id), j).
std::vector<ar::ForecastEnsemble> fm_forecast(const FmModel& model, std::span<const ar::ForecastInput> inputs,
                                              std::size_t samples, std::uint64_t seed);

// Horizons longer than f: window k is re-conditioned on the true trajectory
// up to observe + k f and forecast afresh; windows are concatenated and cut
// to the horizon. Needs ground truth through observe + (windows - 1) f.
std::vector<ar::ForecastEnsemble> fm_forecast_windows(const FmModel& model, const dyn::ForecastDataset& dataset,
                                                      std::size_t horizon, std::size_t samples, std::uint64_t seed);

}  // namespace afm::fm
