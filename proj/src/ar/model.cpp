#include "afm/ar/model.hpp"

#include <cstring>

#include "afm/errors.hpp"
#include "afm/nets/bundle.hpp"
#include "afm/numcore/rng.hpp"
#include "afm/util/text.hpp"

namespace afm::ar {
namespace {

constexpr const char* kFormat = "afm-model";

nets::EncoderSpec encoder_spec(const ModelSpec& s) {
  return {.input_dim = s.dim + s.covariate_dim,
          .hidden = s.arch.encoder_hidden,
          .layers = s.arch.encoder_layers,
          .out_dim = s.arch.context_dim};
}

nets::VelocitySpec velocity_spec(const ModelSpec& s) {
  return {.state_dim = s.dim,
          .context_dim = s.arch.context_dim,
          .covariate_dim = s.covariate_dim,
          .embed_dim = s.arch.embed_dim,
          .hidden = s.arch.mlp_hidden,
          .depth = s.arch.mlp_depth};
}

void validate(const ModelSpec& s) {
  if (s.dim == 0) throw ValidationError("model dimension must be positive");
  if (s.window == 0) throw ValidationError("window must be at least 1");
  if (s.normalization.mean.size() != s.dim || s.normalization.stddev.size() != s.dim) {
    throw ValidationError("normalization statistics do not match model dimension " + std::to_string(s.dim));
  }
  flow::validate(s.flow);
  flow::validate(s.sampler);
}

nlohmann::json spec_json(const ModelSpec& s) {
  return {{"format", kFormat},
          {"version", 1},
          {"model_kind", "afm"},
          {"dim", s.dim},
          {"covariate_dim", s.covariate_dim},
          {"window", s.window},
          {"architecture", to_json(s.arch)},
          {"flow", {{"sigma_path", s.flow.sigma_path}}},
          {"sampler", {{"method", flow::method_name(s.sampler.method)}, {"n_steps", s.sampler.n_steps}}},
          {"normalization", to_json(s.normalization)},
          {"dataset_id", s.dataset_id}};
}

}  // namespace

nlohmann::json to_json(const Architecture& a) {
  return {{"encoder_hidden", a.encoder_hidden}, {"encoder_layers", a.encoder_layers},
          {"context_dim", a.context_dim},       {"mlp_hidden", a.mlp_hidden},
          {"mlp_depth", a.mlp_depth},           {"embed_dim", a.embed_dim}};
}

Architecture architecture_from_json(const nlohmann::json& j) {
  Architecture a;
  a.encoder_hidden = j.at("encoder_hidden").get<std::size_t>();
  a.encoder_layers = j.at("encoder_layers").get<std::size_t>();
  a.context_dim = j.at("context_dim").get<std::size_t>();
  a.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
  a.mlp_depth = j.at("mlp_depth").get<std::size_t>();
  a.embed_dim = j.at("embed_dim").get<std::size_t>();
  return a;
}

nlohmann::json to_json(const dyn::Normalization& n) {
  return {{"mean", n.mean}, {"std", n.stddev}, {"id", n.id()}};
}

dyn::Normalization normalization_from_json(const nlohmann::json& j) {
  dyn::Normalization n{j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>()};
  if (j.contains("id") && j.at("id").get<std::string>() != n.id()) {
    throw ValidationError("normalization id does not match its statistics");
  }
  return n;
}

AfmModel::AfmModel(ModelSpec spec, std::uint64_t init_seed) : spec_(std::move(spec)) {
  validate(spec_);
  num::Rng rng(init_seed);
  encoder_ = nets::ContextEncoder(encoder_spec(spec_), params_, rng);
  velocity_ = nets::VelocityNet(velocity_spec(spec_), params_, rng);
  embedder_ = nets::FourierEmbedder(spec_.arch.embed_dim);
}

std::string AfmModel::id() const {
  const std::vector<double> flat = params_.flatten();
  std::string bytes(flat.size() * sizeof(double), '\0');
  std::memcpy(bytes.data(), flat.data(), bytes.size());
  return util::hex64(util::fnv1a(bytes, util::fnv1a(spec_json(spec_).dump())));
}

void AfmModel::save(const std::filesystem::path& dir) const {
  nlohmann::json manifest = spec_json(spec_);
  manifest["model_id"] = id();
  nets::write_bundle(dir, manifest, params_);
}

AfmModel AfmModel::load(const std::filesystem::path& dir) {
  const nlohmann::json m = nets::read_manifest(dir);
  try {
    if (m.at("format").get<std::string>() != kFormat) throw ValidationError("not a model bundle: " + dir.string());
    if (m.at("model_kind").get<std::string>() != "afm") {
      throw ValidationError("bundle " + dir.string() + " holds a '" + m.at("model_kind").get<std::string>() +
                            "' model, expected 'afm'");
    }
    ModelSpec spec;
    spec.dim = m.at("dim").get<std::size_t>();
    spec.covariate_dim = m.at("covariate_dim").get<std::size_t>();
    spec.window = m.at("window").get<std::size_t>();
    spec.arch = architecture_from_json(m.at("architecture"));
    spec.flow.sigma_path = m.at("flow").at("sigma_path").get<double>();
    spec.sampler.method = flow::parse_method(m.at("sampler").at("method").get<std::string>());
    spec.sampler.n_steps = m.at("sampler").at("n_steps").get<std::size_t>();
    spec.normalization = normalization_from_json(m.at("normalization"));
    spec.dataset_id = m.value("dataset_id", std::string());
    AfmModel model(std::move(spec));
    nets::read_parameters(dir, m, model.params_);
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed model manifest in " + dir.string() + ": " + e.what());
  }
}

}  // namespace afm::ar
