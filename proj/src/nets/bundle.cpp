#include "afm/nets/bundle.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "afm/errors.hpp"
#include "afm/util/text.hpp"

namespace afm::nets {
namespace {

constexpr const char* kManifest = "model.json";
constexpr const char* kParams = "params.bin";

std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0x00000000000000FFull) << 56) | ((v & 0x000000000000FF00ull) << 40) |
        ((v & 0x0000000000FF0000ull) << 24) | ((v & 0x00000000FF000000ull) << 8) |
        ((v & 0x000000FF00000000ull) >> 8) | ((v & 0x0000FF0000000000ull) >> 24) |
        ((v & 0x00FF000000000000ull) >> 40) | ((v & 0xFF00000000000000ull) >> 56);
  }
  return v;
}

}  // namespace

void write_bundle(const std::filesystem::path& dir, nlohmann::json manifest, const num::ParameterSet& params) {
  std::filesystem::create_directories(dir);
  nlohmann::json table = nlohmann::json::array();
  for (const auto& p : params) {
    table.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
  }
  manifest["parameters"] = table;
  manifest["parameter_file"] = kParams;
  manifest["parameter_count"] = params.scalar_count();

  const std::vector<double> flat = params.flatten();
  std::string bytes(flat.size() * 8, '\0');
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const std::uint64_t word = to_little(std::bit_cast<std::uint64_t>(flat[i]));
    std::memcpy(bytes.data() + 8 * i, &word, 8);
  }
  util::write_file(dir / kParams, bytes);
  util::write_file(dir / kManifest, manifest.dump(2) + "\n");
}

nlohmann::json read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / kManifest;
  if (!std::filesystem::exists(path)) throw ValidationError("no model manifest at " + path.string());
  try {
    return nlohmann::json::parse(util::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed model manifest " + path.string() + ": " + e.what());
  }
}

void read_parameters(const std::filesystem::path& dir, const nlohmann::json& manifest, num::ParameterSet& params) {
  const auto& table = manifest.at("parameters");
  if (table.size() != params.size()) {
    throw ValidationError("model manifest lists " + std::to_string(table.size()) + " parameter blocks, expected " +
                          std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = table[i];
    const auto& p = params[i];
    if (entry.at("name").get<std::string>() != p.name || entry.at("rows").get<std::size_t>() != p.value.rows() ||
        entry.at("cols").get<std::size_t>() != p.value.cols()) {
      throw ValidationError("parameter block " + std::to_string(i) + " is " + entry.dump() + ", expected " +
                            p.name + " " + p.value.shape_string());
    }
  }
  const std::string bytes = util::read_file(dir / manifest.value("parameter_file", std::string(kParams)));
  if (bytes.size() != params.scalar_count() * 8) {
    throw ValidationError("parameter file holds " + std::to_string(bytes.size()) + " bytes, expected " +
                          std::to_string(params.scalar_count() * 8));
  }
  std::vector<double> flat(params.scalar_count());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    std::uint64_t word = 0;
    std::memcpy(&word, bytes.data() + 8 * i, 8);
    flat[i] = std::bit_cast<double>(to_little(word));
  }
  params.assign(flat);
}

}  // namespace afm::nets
