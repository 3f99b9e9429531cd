#include "afm/dynsys/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <sstream>

#include "afm/errors.hpp"
#include "afm/numcore/rng.hpp"
#include "afm/util/log.hpp"
#include "afm/util/parallel.hpp"
#include "afm/util/text.hpp"

namespace afm::dyn {

using nlohmann::json;

num::Matrix Normalization::normalize(const num::Matrix& raw) const {
  if (raw.cols() != mean.size()) {
    throw ValidationError("normalize: data has " + std::to_string(raw.cols()) + " columns, statistics cover " +
                          std::to_string(mean.size()));
  }
  num::Matrix out(raw.rows(), raw.cols());
  for (std::size_t r = 0; r < raw.rows(); ++r) {
    for (std::size_t c = 0; c < raw.cols(); ++c) out(r, c) = (raw(r, c) - mean[c]) / stddev[c];
  }
  return out;
}

num::Matrix Normalization::denormalize(const num::Matrix& standardized) const {
  if (standardized.cols() != mean.size()) {
    throw ValidationError("denormalize: column count does not match statistics");
  }
  num::Matrix out(standardized.rows(), standardized.cols());
  for (std::size_t r = 0; r < standardized.rows(); ++r) {
    for (std::size_t c = 0; c < standardized.cols(); ++c) {
      out(r, c) = standardized(r, c) * stddev[c] + mean[c];
    }
  }
  return out;
}

std::string Normalization::id() const {
  std::string bytes;
  for (double v : mean) bytes += util::format_double(v) + ",";
  bytes += ";";
  for (double v : stddev) bytes += util::format_double(v) + ",";
  return util::hex64(util::fnv1a(bytes));
}

Normalization fit_normalization(std::span<const Trajectory> train, const Split& split) {
  if (train.empty()) throw ValidationError("normalization needs at least one training trajectory");
  const std::size_t dim = train.front().states.cols();
  const std::size_t span = std::min(split.observe + split.predict, train.front().states.rows());
  Normalization norm;
  norm.mean.assign(dim, 0.0);
  norm.stddev.assign(dim, 0.0);
  double count = 0.0;
  for (const auto& t : train) {
    for (std::size_t k = 0; k < span; ++k) {
      for (std::size_t d = 0; d < dim; ++d) norm.mean[d] += t.states(k, d);
    }
    count += static_cast<double>(span);
  }
  for (double& m : norm.mean) m /= count;
  for (const auto& t : train) {
    for (std::size_t k = 0; k < span; ++k) {
      for (std::size_t d = 0; d < dim; ++d) {
        const double e = t.states(k, d) - norm.mean[d];
        norm.stddev[d] += e * e;
      }
    }
  }
  for (double& s : norm.stddev) {
    s = count > 1.0 ? std::sqrt(s / (count - 1.0)) : 0.0;
    if (!(s > 0.0)) s = 1.0;
  }
  return norm;
}

ForecastDataset generate_dataset(const SdeSystem& system, std::size_t n_train, std::size_t n_test,
                                 std::uint64_t seed, const GenerateOptions& options) {
  if (n_train == 0 || n_test == 0) throw ValidationError("generate_dataset: counts must be positive");
  if (options.split.total() != system.steps) {
    throw ValidationError("generate_dataset: split " + std::to_string(options.split.observe) + "/" +
                          std::to_string(options.split.predict) + "/" +
                          std::to_string(options.split.extrapolate) + " does not cover " +
                          std::to_string(system.steps) + " steps");
  }
  constexpr std::size_t kMaxAttempts = 1000;
  const std::size_t total = n_train + n_test;
  std::vector<Trajectory> trajectories(total);
  std::vector<std::size_t> rejections(total, 0);
  std::atomic<std::size_t> rejected_so_far{0};
  auto over_budget = [&](std::size_t r) {
    return static_cast<double>(r) / static_cast<double>(total + r) > options.max_rejection_rate;
  };

  util::parallel_for(total, [&](std::size_t i) {
    num::Rng rng(num::derive_seed(seed, i));
    for (std::size_t attempt = 0;; ++attempt) {
      if (attempt == kMaxAttempts) {
        throw NumericalError("generate_dataset: trajectory " + std::to_string(i) + " diverged " +
                             std::to_string(kMaxAttempts) + " times");
      }
      const std::vector<double> x0 = sample_initial_condition(system, rng);
      try {
        trajectories[i] = simulate(system, x0, rng, options.simulate);
        trajectories[i].id = i;
        return;
      } catch (const DivergenceError& e) {
        ++rejections[i];
        util::log_warn("trajectory " + std::to_string(i) + " rejected: " + e.what());
        if (over_budget(++rejected_so_far)) {
          throw NumericalError("generate_dataset: more than " +
                               util::format_double(100.0 * options.max_rejection_rate) + "% of '" +
                               system.name + "' simulations diverged (last: trajectory " +
                               std::to_string(i) + ")");
        }
      }
    }
  });

  std::size_t rejected = 0;
  for (std::size_t r : rejections) rejected += r;
  if (over_budget(rejected)) {
    throw NumericalError("generate_dataset: " + std::to_string(rejected) + " of " +
                         std::to_string(total + rejected) + " simulations of '" + system.name +
                         "' diverged (limit " + util::format_double(100.0 * options.max_rejection_rate) +
                         "%)");
  }

  ForecastDataset ds;
  ds.system = system.name;
  ds.params = system.params;
  ds.diffusion = system.diffusion;
  ds.dim = system.dim;
  ds.steps = system.steps;
  ds.split = options.split;
  ds.seed = seed;
  ds.rejected = rejected;
  ds.train.assign(std::make_move_iterator(trajectories.begin()),
                  std::make_move_iterator(trajectories.begin() + static_cast<std::ptrdiff_t>(n_train)));
  ds.test.assign(std::make_move_iterator(trajectories.begin() + static_cast<std::ptrdiff_t>(n_train)),
                 std::make_move_iterator(trajectories.end()));
  ds.normalization = fit_normalization(ds.train, ds.split);
  return ds;
}

namespace {

std::string trajectories_csv(const ForecastDataset& ds, std::span<const Trajectory> trajs) {
  std::string out = "trajectory_id,step_index,t";
  for (std::size_t d = 0; d < ds.dim; ++d) out += ",x_" + std::to_string(d + 1);
  for (std::size_t c = 0; c < ds.covariate_dim; ++c) out += ",c_" + std::to_string(c + 1);
  out += '\n';
  for (const auto& t : trajs) {
    for (std::size_t k = 0; k < t.states.rows(); ++k) {
      out += std::to_string(t.id);
      out += ',';
      out += std::to_string(k);
      out += ',';
      out += util::format_double(t.times[k]);
      for (double v : t.states.row(k)) {
        out += ',';
        out += util::format_double(v);
      }
      if (ds.covariate_dim > 0) {
        for (double v : t.covariates.row(k)) {
          out += ',';
          out += util::format_double(v);
        }
      }
      out += '\n';
    }
  }
  return out;
}

std::vector<Trajectory> parse_trajectories(const std::string& text, const std::string& label,
                                           std::size_t dim, std::size_t cov_dim, std::size_t steps) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(label + ": missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = util::split(line, ',');
  const std::size_t expected = 3 + dim + cov_dim;
  if (header.size() != expected || header[0] != "trajectory_id" || header[1] != "step_index" ||
      header[2] != "t") {
    throw ValidationError(label + ": header must be trajectory_id,step_index,t followed by " +
                          std::to_string(dim) + " state and " + std::to_string(cov_dim) +
                          " covariate columns");
  }
  std::map<std::size_t, Trajectory> by_id;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = util::split(line, ',');
    if (cells.size() != expected) {
      throw ValidationError(label + ":" + std::to_string(line_no) + ": expected " + std::to_string(expected) +
                            " fields, got " + std::to_string(cells.size()));
    }
    try {
      const std::size_t id = util::parse_uint(cells[0]);
      const std::size_t k = util::parse_uint(cells[1]);
      Trajectory& t = by_id[id];
      if (t.states.empty()) {
        t.id = id;
        t.times.assign(steps, 0.0);
        t.states = num::Matrix(steps, dim, std::nan(""));
        if (cov_dim > 0) t.covariates = num::Matrix(steps, cov_dim, std::nan(""));
      }
      if (k >= steps) throw ValidationError("step_index " + std::to_string(k) + " out of range");
      t.times[k] = util::parse_double(cells[2]);
      for (std::size_t d = 0; d < dim; ++d) t.states(k, d) = util::parse_double(cells[3 + d]);
      for (std::size_t c = 0; c < cov_dim; ++c) t.covariates(k, c) = util::parse_double(cells[3 + dim + c]);
    } catch (const ValidationError& e) {
      throw ValidationError(label + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  std::vector<Trajectory> out;
  for (auto& [id, t] : by_id) {
    if (!t.states.all_finite() || (cov_dim > 0 && !t.covariates.all_finite())) {
      throw ValidationError(label + ": trajectory " + std::to_string(id) + " is missing steps or has non-finite values");
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

void save_dataset(const ForecastDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json meta;
  meta["format"] = "afm-dataset";
  meta["version"] = 1;
  meta["system"] = ds.system;
  meta["dim"] = ds.dim;
  meta["covariate_dim"] = ds.covariate_dim;
  meta["steps"] = ds.steps;
  json params = json::object();
  for (const auto& p : ds.params) params[p.name] = p.value;
  meta["params"] = params;
  meta["param_order"] = json::array();
  for (const auto& p : ds.params) meta["param_order"].push_back(p.name);
  meta["diffusion"] = ds.diffusion;
  meta["split"] = {{"observe", ds.split.observe},
                   {"predict", ds.split.predict},
                   {"extrapolate", ds.split.extrapolate}};
  meta["normalization"] = {{"mean", ds.normalization.mean},
                           {"std", ds.normalization.stddev},
                           {"id", ds.normalization.id()}};
  meta["seed"] = ds.seed;
  meta["counts"] = {{"train", ds.train.size()}, {"test", ds.test.size()}, {"rejected", ds.rejected}};
  util::write_file(dir / "meta.json", meta.dump(2) + "\n");
  util::write_file(dir / "train.csv", trajectories_csv(ds, ds.train));
  util::write_file(dir / "test.csv", trajectories_csv(ds, ds.test));
}

ForecastDataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ValidationError("dataset directory " + dir.string() + " not found");
  json meta;
  try {
    meta = json::parse(util::read_file(dir / "meta.json"));
  } catch (const json::exception& e) {
    throw ValidationError("meta.json: " + std::string(e.what()));
  }
  ForecastDataset ds;
  try {
    ds.system = meta.at("system").get<std::string>();
    ds.dim = meta.at("dim").get<std::size_t>();
    ds.covariate_dim = meta.value("covariate_dim", std::size_t{0});
    ds.steps = meta.at("steps").get<std::size_t>();
    const auto& split = meta.at("split");
    ds.split = {split.at("observe").get<std::size_t>(), split.at("predict").get<std::size_t>(),
                split.at("extrapolate").get<std::size_t>()};
    if (meta.contains("param_order")) {
      for (const auto& name : meta["param_order"]) {
        const auto key = name.get<std::string>();
        ds.params.push_back({key, meta.at("params").at(key).get<double>()});
      }
    }
    ds.diffusion = meta.value("diffusion", std::vector<double>{});
    ds.seed = meta.value("seed", std::uint64_t{0});
    if (meta.contains("counts")) ds.rejected = meta["counts"].value("rejected", std::size_t{0});
  } catch (const json::exception& e) {
    throw ValidationError("meta.json: " + std::string(e.what()));
  }
  if (ds.dim == 0) throw ValidationError("meta.json: dim must be positive");
  if (ds.split.total() != ds.steps) throw ValidationError("meta.json: split does not add up to steps");

  ds.train = parse_trajectories(util::read_file(dir / "train.csv"), "train.csv", ds.dim, ds.covariate_dim, ds.steps);
  ds.test = parse_trajectories(util::read_file(dir / "test.csv"), "test.csv", ds.dim, ds.covariate_dim, ds.steps);
  if (ds.train.empty() || ds.test.empty()) throw ValidationError("dataset needs both train and test trajectories");
  for (const auto& a : ds.train) {
    for (const auto& b : ds.test) {
      if (a.id == b.id) throw ValidationError("trajectory " + std::to_string(a.id) + " is in both partitions");
    }
  }

  if (meta.contains("normalization")) {
    ds.normalization.mean = meta["normalization"].at("mean").get<std::vector<double>>();
    ds.normalization.stddev = meta["normalization"].at("std").get<std::vector<double>>();
    if (ds.normalization.mean.size() != ds.dim || ds.normalization.stddev.size() != ds.dim) {
      throw ValidationError("meta.json: normalization statistics do not match dim");
    }
  } else {
    ds.normalization = fit_normalization(ds.train, ds.split);
  }
  return ds;
}

std::string dataset_id(const std::filesystem::path& dir) {
  return util::hex64(util::fnv1a(util::read_file(dir / "meta.json")));
}

}  // namespace afm::dyn
