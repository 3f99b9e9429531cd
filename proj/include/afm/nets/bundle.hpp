#pragma once

#include <filesystem>
#include <json.hpp>

#include "afm/numcore/params.hpp"

namespace afm::nets {

// A model directory holds model.json (caller-supplied manifest plus the
// parameter table) and params.bin (float64, little-endian, manifest order).
void write_bundle(const std::filesystem::path& dir, nlohmann::json manifest, const num::ParameterSet& params);

nlohmann::json read_manifest(const std::filesystem::path& dir);

// Loads params.bin into params, which must already have the layout recorded
// in the manifest (same names and shapes in the same order).
void read_parameters(const std::filesystem::path& dir, const nlohmann::json& manifest, num::ParameterSet& params);

}  // namespace afm::nets
