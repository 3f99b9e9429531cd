#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "afm/dynsys/dataset.hpp"
#include "afm/flowpath/flowpath.hpp"
#include "afm/nets/encoder.hpp"
#include "afm/nets/fourier.hpp"
#include "afm/nets/velocity.hpp"
#include "afm/numcore/params.hpp"

namespace afm::ar {

struct Architecture {
  std::size_t encoder_hidden = 64;
  std::size_t encoder_layers = 2;
  std::size_t context_dim = 64;
  std::size_t mlp_hidden = 64;
  std::size_t mlp_depth = 3;
  std::size_t embed_dim = 16;
};

struct ModelSpec {
  std::size_t dim = 1;
  std::size_t covariate_dim = 0;
  std::size_t window = 75;
  Architecture arch;
  flow::FlowPathConfig flow;
  flow::OdeSamplerConfig sampler;
  dyn::Normalization normalization;
  std::string dataset_id;
};

nlohmann::json to_json(const Architecture& arch);
Architecture architecture_from_json(const nlohmann::json& j);
nlohmann::json to_json(const dyn::Normalization& norm);
dyn::Normalization normalization_from_json(const nlohmann::json& j);

// Context encoder, velocity network and their parameters. Parameters are
// drawn from init_seed; load() overwrites them from a bundle.
class AfmModel {
 public:
  explicit AfmModel(ModelSpec spec, std::uint64_t init_seed = 0);
  AfmModel(const AfmModel& other) = default;
  AfmModel& operator=(const AfmModel& other) = default;

  const ModelSpec& spec() const { return spec_; }
  void set_dataset_id(std::string id) { spec_.dataset_id = std::move(id); }
  num::ParameterSet& params() { return params_; }
  const num::ParameterSet& params() const { return params_; }
  const nets::ContextEncoder& encoder() const { return encoder_; }
  const nets::VelocityNet& velocity() const { return velocity_; }
  const nets::FourierEmbedder& embedder() const { return embedder_; }
  std::size_t step_width() const { return spec_.dim + spec_.covariate_dim; }

  // Content hash over the spec and parameter values.
  std::string id() const;

  void save(const std::filesystem::path& dir) const;
  static AfmModel load(const std::filesystem::path& dir);

 private:
  ModelSpec spec_;
  num::ParameterSet params_;
  nets::ContextEncoder encoder_;
  nets::VelocityNet velocity_;
  nets::FourierEmbedder embedder_;
};

}  // namespace afm::ar
