#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "afm/ar/afm.hpp"
#include "afm/fmbase/fm.hpp"

namespace afm::cli {

enum class Scale { kSmoke, kDesk, kFull };

Scale parse_scale(std::string_view name);
std::string_view scale_name(Scale s);

struct ExperimentConfig {
  std::string system = "brusselator";
  bool system_set = false;  // named explicitly, so a dataset must match it
  std::string dataset;  // existing dataset directory; overrides system
  std::string model_kind = "afm";
  std::string out;
  std::vector<std::uint64_t> seeds{0};
  std::size_t n_train = 2000;
  std::size_t n_test = 400;
  std::uint64_t data_seed = 0;
  std::size_t samples = 100;
  std::optional<std::size_t> horizon;  // defaults to predict + extrapolate
  ar::AfmConfig afm;
  fm::FmConfig fm;
};

// Reference settings at full scale; desk and smoke shrink counts, steps and
// network sizes.
ExperimentConfig preset(Scale scale);

// Overlays a JSON document on `base`. Unknown keys, wrong types and out of
// range values raise ValidationError naming the key.
ExperimentConfig apply_json(const nlohmann::json& doc, ExperimentConfig base);
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base);
nlohmann::json to_json(const ExperimentConfig& cfg);

// Range checks shared by the JSON path and command-line overrides.
void validate(const ExperimentConfig& cfg);

}  // namespace afm::cli
