#include "afm/cli/cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <cerrno>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "afm/ar/afm.hpp"
#include "afm/cli/config.hpp"
#include "afm/dynsys/dataset.hpp"
#include "afm/errors.hpp"
#include "afm/fmbase/fm.hpp"
#include "afm/metrics/metrics.hpp"
#include "afm/nets/bundle.hpp"
#include "afm/util/log.hpp"
#include "afm/util/text.hpp"

namespace afm::cli {
namespace {

namespace fs = std::filesystem;

constexpr double kQuantileLevels[] = {0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95};
constexpr const char* kLockName = ".afm.lock";

// Claims an output directory for one command: refuses a non-empty directory
// unless forced, and holds a lock file until destroyed.
class OutputDir {
 public:
  OutputDir(const fs::path& dir, bool force) : dir_(dir) {
    if (dir.empty()) throw ValidationError("an output directory (--out) is required");
    if (fs::exists(dir) && !fs::is_directory(dir)) throw ValidationError("output path " + dir.string() + " is a file");
    const fs::path lock = dir / kLockName;
    if (fs::exists(lock)) {
      throw ValidationError("output directory " + dir.string() + " is in use by another command (remove " +
                            lock.string() + " if that command is gone)");
    }
    if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
      throw ValidationError("output directory " + dir.string() + " is not empty; pass --force to overwrite");
    }
    fs::create_directories(dir);
    const int fd = ::open(lock.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      throw ValidationError("cannot lock output directory " + dir.string() + ": " + std::strerror(errno));
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] const auto written = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  OutputDir(const OutputDir&) = delete;
  OutputDir& operator=(const OutputDir&) = delete;
  ~OutputDir() {
    std::error_code ec;
    fs::remove(dir_ / kLockName, ec);
  }

 private:
  fs::path dir_;
};

// Re-throws failures of one pipeline stage with the stage named.
template <class Fn>
auto stage(const std::string& name, Fn&& fn) {
  try {
    return fn();
  } catch (const ValidationError& e) {
    throw ValidationError("stage " + name + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError("stage " + name + ": " + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error("stage " + name + ": " + e.what());
  }
}

std::string model_kind_of(const fs::path& model_dir) {
  const auto manifest = nets::read_manifest(model_dir);
  const std::string kind = manifest.value("model_kind", std::string());
  if (kind != "afm" && kind != "fm") {
    throw ValidationError("model bundle " + model_dir.string() + " has unknown model_kind '" + kind + "'");
  }
  return kind;
}

void write_train_log(const fs::path& path, const std::vector<ar::TrainRecord>& log) {
  std::string out = "step,loss,wall_time\n";
  for (const auto& r : log) {
    out += std::to_string(r.step) + ',' + util::format_double(r.loss) + ',' + util::format_double(r.wall_time) + '\n';
  }
  util::write_file(path, out);
}

dyn::ForecastDataset simulate_into(const std::string& system, std::size_t n_train, std::size_t n_test,
                                   std::uint64_t seed, const fs::path& dir, std::ostream& out) {
  auto ds = dyn::generate_dataset(dyn::system_by_name(system), n_train, n_test, seed);
  dyn::save_dataset(ds, dir);
  const double attempts = static_cast<double>(n_train + n_test + ds.rejected);
  out << "simulated " << system << ": " << n_train + n_test << " trajectories (" << n_train << " train, " << n_test
      << " test), " << ds.rejected << " rejected (rate " << util::format_double(ds.rejected / attempts) << ") -> "
      << dir.string() << "\n";
  return ds;
}

void check_dataset_matches(const ExperimentConfig& cfg, const dyn::ForecastDataset& ds) {
  if (cfg.system_set && cfg.system != ds.system) {
    throw ValidationError("config names system '" + cfg.system + "' but the dataset holds '" + ds.system + "'");
  }
}

// Trains one model into `dir` (bundle plus train_log.csv) and returns its kind-specific id.
std::string train_into(const ExperimentConfig& cfg, const std::string& kind, const fs::path& dataset_dir,
                       const dyn::ForecastDataset& ds, std::uint64_t seed, const fs::path& dir, std::size_t log_every,
                       std::ostream& out) {
  check_dataset_matches(cfg, ds);
  const std::string data_id = dyn::dataset_id(dataset_dir);
  const ar::TrainOptions options{.log_every = log_every};
  if (kind == "afm") {
    ar::AfmConfig c = cfg.afm;
    c.seed = seed;
    auto result = ar::train(ds, c, options);
    result.model.set_dataset_id(data_id);
    result.model.save(dir);
    write_train_log(dir / "train_log.csv", result.log);
    out << "trained afm on " << ds.system << " (seed " << seed << ", " << result.log.size()
        << " steps, best smoothed loss " << util::format_double(result.best_smoothed_loss) << ") -> " << dir.string()
        << "\n";
    return result.model.id();
  }
  fm::FmConfig c = cfg.fm;
  c.seed = seed;
  auto result = fm::fm_train(ds, c, options);
  result.model.set_dataset_id(data_id);
  result.model.save(dir);
  write_train_log(dir / "train_log.csv", result.log);
  out << "trained fm on " << ds.system << " (seed " << seed << ", " << result.log.size()
      << " steps, best smoothed loss " << util::format_double(result.best_smoothed_loss) << ") -> " << dir.string()
      << "\n";
  return result.model.id();
}

void check_compatible(std::size_t dim, std::size_t covariate_dim, const dyn::Normalization& norm,
                      const dyn::ForecastDataset& ds) {
  if (dim != ds.dim || covariate_dim != ds.covariate_dim) {
    throw ValidationError("model expects " + std::to_string(dim) + " dimensions and " + std::to_string(covariate_dim) +
                          " covariates; dataset has " + std::to_string(ds.dim) + " and " +
                          std::to_string(ds.covariate_dim));
  }
  if (norm.id() != ds.normalization.id()) {
    throw ValidationError("model normalization " + norm.id() + " does not match the dataset's " +
                          ds.normalization.id() + "; the model was trained on different data");
  }
}

std::vector<ar::ForecastEnsemble> forecast_model(const fs::path& model_dir, const dyn::ForecastDataset& ds,
                                                 std::size_t horizon, std::size_t samples, std::uint64_t seed) {
  if (horizon == 0) throw ValidationError("forecast horizon must be at least 1");
  if (samples == 0) throw ValidationError("forecast needs at least one sample path");
  if (model_kind_of(model_dir) == "afm") {
    const auto model = ar::AfmModel::load(model_dir);
    check_compatible(model.spec().dim, model.spec().covariate_dim, model.spec().normalization, ds);
    const auto inputs = ar::test_inputs(ds, horizon);
    return ar::forecast(model, inputs, horizon, samples, seed);
  }
  const auto model = fm::FmModel::load(model_dir);
  check_compatible(model.spec().dim, model.spec().covariate_dim, model.spec().normalization, ds);
  return fm::fm_forecast_windows(model, ds, horizon, samples, seed);
}

std::string describe(const metrics::MetricReport& r) {
  std::ostringstream s;
  bool first = true;
  for (const auto& m : r.regimes) {
    s << (first ? "" : "; ") << metrics::regime_name(m.regime) << " crps " << util::format_double(m.crps) << " nrmse "
      << util::format_double(m.nrmse);
    first = false;
  }
  for (const auto& g : r.gaps) s << (first ? "" : "; ") << g << " missing";
  return s.str();
}

fs::path forecast_file(const fs::path& p) { return fs::is_directory(p) ? p / "forecast.csv" : p; }

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  for (auto part : util::split(text, ',')) {
    if (!part.empty()) out.emplace_back(part);
  }
  return out;
}

// ---- commands ---------------------------------------------------------------

struct CommonFlags {
  std::string config;
  std::optional<std::string> scale;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
};

ExperimentConfig resolve(const CommonFlags& f, Scale default_scale) {
  ExperimentConfig cfg = preset(f.scale ? parse_scale(*f.scale) : default_scale);
  if (!f.config.empty()) cfg = load_config(f.config, cfg);
  if (f.seed) cfg.seeds = {*f.seed};
  if (!f.out.empty()) cfg.out = f.out;
  return cfg;
}

struct SimulateFlags {
  CommonFlags common;
  std::optional<std::string> system;
  std::optional<std::size_t> train, test;
};

int cmd_simulate(const SimulateFlags& f, std::ostream& out) {
  ExperimentConfig cfg = resolve(f.common, Scale::kFull);
  if (f.system) cfg.system = *f.system;
  if (f.train) cfg.n_train = *f.train;
  if (f.test) cfg.n_test = *f.test;
  if (f.common.seed) cfg.data_seed = *f.common.seed;
  validate(cfg);
  if (cfg.out.empty()) cfg.out = (fs::path("data") / cfg.system).string();
  OutputDir dir(cfg.out, f.common.force);
  simulate_into(cfg.system, cfg.n_train, cfg.n_test, cfg.data_seed, cfg.out, out);
  return kExitOk;
}

struct TrainFlags {
  CommonFlags common;
  std::optional<std::string> model;
  std::string dataset;
  std::optional<std::size_t> max_steps;
  std::size_t log_every = 0;
};

int cmd_train(const TrainFlags& f, std::ostream& out) {
  ExperimentConfig cfg = resolve(f.common, Scale::kFull);
  if (f.model) cfg.model_kind = *f.model;
  if (!f.dataset.empty()) cfg.dataset = f.dataset;
  if (f.max_steps) {
    cfg.afm.max_steps = *f.max_steps;
    cfg.fm.max_steps = *f.max_steps;
  }
  validate(cfg);
  if (cfg.dataset.empty()) throw ValidationError("train needs --dataset");
  const auto ds = dyn::load_dataset(cfg.dataset);
  check_dataset_matches(cfg, ds);
  OutputDir dir(cfg.out, f.common.force);
  train_into(cfg, cfg.model_kind, cfg.dataset, ds, cfg.seeds.front(), cfg.out, f.log_every, out);
  return kExitOk;
}

struct ForecastFlags {
  CommonFlags common;
  std::string model;
  std::string dataset;
  std::optional<std::size_t> samples, horizon;
};

int cmd_forecast(const ForecastFlags& f, std::ostream& out) {
  ExperimentConfig cfg = resolve(f.common, Scale::kFull);
  if (!f.dataset.empty()) cfg.dataset = f.dataset;
  if (f.samples) cfg.samples = *f.samples;
  if (f.horizon) cfg.horizon = *f.horizon;
  validate(cfg);
  if (f.model.empty()) throw ValidationError("forecast needs --model");
  if (cfg.dataset.empty()) throw ValidationError("forecast needs --dataset");
  const auto ds = dyn::load_dataset(cfg.dataset);
  const std::size_t horizon = cfg.horizon.value_or(ds.split.predict + ds.split.extrapolate);
  OutputDir dir(cfg.out, f.common.force);
  const auto ensembles = forecast_model(f.model, ds, horizon, cfg.samples, cfg.seeds.front());
  ar::write_forecast_csv(fs::path(cfg.out) / "forecast.csv", ensembles);
  ar::write_quantiles_csv(fs::path(cfg.out) / "quantiles.csv", ensembles, kQuantileLevels);
  std::size_t failed = 0;
  for (const auto& e : ensembles) failed += e.failed;
  out << "forecast " << ensembles.size() << " instances x " << cfg.samples << " samples x " << horizon << " steps ("
      << failed << " paths excluded) -> " << cfg.out << "\n";
  return kExitOk;
}

struct EvaluateFlags {
  CommonFlags common;
  std::vector<std::string> forecasts;
  std::string dataset;
  std::string model_kind = "model";
  bool breakdown = false;
};

int cmd_evaluate(const EvaluateFlags& f, std::ostream& out) {
  ExperimentConfig cfg = resolve(f.common, Scale::kFull);
  if (!f.dataset.empty()) cfg.dataset = f.dataset;
  if (cfg.dataset.empty()) throw ValidationError("evaluate needs --dataset");
  if (f.forecasts.empty()) throw ValidationError("evaluate needs at least one --forecast");
  const auto ds = dyn::load_dataset(cfg.dataset);
  std::vector<metrics::MetricReport> reports;
  for (const auto& p : f.forecasts) {
    const auto ensembles = ar::read_forecast_csv(forecast_file(p));
    reports.push_back(metrics::evaluate(ensembles, ds));
    out << p << ": " << describe(reports.back()) << "\n";
    if (f.breakdown) out << metrics::breakdown_csv(reports.back());
  }
  OutputDir dir(cfg.out, f.common.force);
  const auto rows = metrics::aggregate(f.model_kind, ds.system, reports);
  metrics::write_metrics_csv(fs::path(cfg.out) / "metrics.csv", rows);
  out << "wrote " << rows.size() << " metric rows -> " << (fs::path(cfg.out) / "metrics.csv").string() << "\n";
  return kExitOk;
}

struct ReproFlags {
  CommonFlags common;
  std::string systems = "brusselator,lorenz";
  std::optional<std::size_t> seeds;
  bool keep_forecasts = false;
};

int cmd_repro(const ReproFlags& f, std::ostream& out) {
  CommonFlags common = f.common;
  common.seed.reset();
  ExperimentConfig cfg = resolve(common, Scale::kDesk);
  const std::uint64_t base = f.common.seed.value_or(cfg.seeds.front());
  if (f.seeds) {
    if (*f.seeds == 0) throw ValidationError("--seeds must be at least 1");
    cfg.seeds.clear();
    for (std::size_t k = 0; k < *f.seeds; ++k) cfg.seeds.push_back(base + k);
  }
  if (f.common.seed) cfg.data_seed = base;
  const auto systems = split_list(f.systems);
  if (systems.empty()) throw ValidationError("--systems names no system");
  for (const auto& s : systems) dyn::system_by_name(s);
  validate(cfg);

  const fs::path root = cfg.out;
  OutputDir dir(root, f.common.force);

  std::vector<metrics::MetricRow> aggregate_rows;
  std::string report = "system,model_kind,seed,regime,metric,value,std_err\n";
  for (const auto& system : systems) {
    const fs::path data_dir = root / system / "data";
    const auto ds = stage("simulate " + system, [&] {
      return simulate_into(system, cfg.n_train, cfg.n_test, cfg.data_seed, data_dir, out);
    });
    const std::size_t horizon = cfg.horizon.value_or(ds.split.predict + ds.split.extrapolate);
    for (const std::string kind : {"afm", "fm"}) {
      std::vector<metrics::MetricReport> per_seed;
      for (const std::uint64_t seed : cfg.seeds) {
        const std::string tag = system + ", " + kind + ", seed " + std::to_string(seed);
        const fs::path run = root / system / ("seed" + std::to_string(seed)) / kind;
        fs::create_directories(run);
        stage("train (" + tag + ")",
              [&] { return train_into(cfg, kind, data_dir, ds, seed, run / "model", 0, out); });
        const auto ensembles =
            stage("forecast (" + tag + ")", [&] { return forecast_model(run / "model", ds, horizon, cfg.samples, seed); });
        if (f.keep_forecasts) ar::write_forecast_csv(run / "forecast.csv", ensembles);
        ar::write_quantiles_csv(run / "quantiles.csv", ensembles, kQuantileLevels);
        per_seed.push_back(stage("evaluate (" + tag + ")", [&] { return metrics::evaluate(ensembles, ds); }));
        const auto rows = metrics::aggregate(kind, system, std::span(&per_seed.back(), 1));
        metrics::write_metrics_csv(run / "metrics.csv", rows);
        for (const auto& r : rows) {
          report += system + ',' + kind + ',' + std::to_string(seed) + ',' + r.regime + ',' + r.metric + ',' +
                    util::format_double(r.mean) + ",\n";
        }
        out << tag << ": " << describe(per_seed.back()) << "\n";
      }
      for (const auto& r : metrics::aggregate(kind, system, per_seed)) {
        report += system + ',' + kind + ",all," + r.regime + ',' + r.metric + ',' + util::format_double(r.mean) + ',' +
                  (r.std_err ? util::format_double(*r.std_err) : std::string()) + '\n';
        aggregate_rows.push_back(r);
      }
    }
  }
  metrics::write_metrics_csv(root / "metrics.csv", aggregate_rows);
  util::write_file(root / "report.csv", report);

  out << "\nsystem        model  regime         crps                 nrmse\n";
  for (std::size_t i = 0; i + 1 < aggregate_rows.size(); i += 2) {
    const auto& c = aggregate_rows[i];
    const auto& n = aggregate_rows[i + 1];
    auto fmt = [](const metrics::MetricRow& r) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.4f +- %.4f", r.mean, r.std_err.value_or(0.0));
      return std::string(buf);
    };
    char line[160];
    std::snprintf(line, sizeof line, "%-13s %-6s %-14s %-20s %s\n", c.system.c_str(), c.model_kind.c_str(),
                  c.regime.c_str(), fmt(c).c_str(), fmt(n).c_str());
    out << line;
  }
  out << "report -> " << (root / "report.csv").string() << "\n";
  return kExitOk;
}

void add_common(CLI::App* cmd, CommonFlags& f, bool with_out = true) {
  cmd->add_option("--config", f.config, "JSON experiment config");
  cmd->add_option("--scale", f.scale, "Preset: smoke, desk or full");
  cmd->add_option("--seed", f.seed, "Random seed");
  if (with_out) cmd->add_option("--out", f.out, "Output directory");
  cmd->add_flag("--force", f.force, "Write into a non-empty output directory");
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Autoregressive flow matching forecasting toolkit", "afm"};
  app.require_subcommand(1);
  bool quiet = false, verbose = false;
  app.add_flag("-q,--quiet", quiet, "Only print errors");
  app.add_flag("-v,--verbose", verbose, "Print progress");

  SimulateFlags sim;
  auto* simulate = app.add_subcommand("simulate", "Generate a benchmark dataset");
  add_common(simulate, sim.common);
  simulate->get_option("--out")->description("Output directory (default data/<system>)");
  simulate->add_option("--system", sim.system, "lorenz, fitzhugh_nagumo, lotka_volterra, brusselator or van_der_pol");
  simulate->add_option("--train", sim.train, "Training trajectories");
  simulate->add_option("--test", sim.test, "Test trajectories");

  TrainFlags tr;
  auto* train = app.add_subcommand("train", "Train an AFM or FM model");
  add_common(train, tr.common);
  train->add_option("--model", tr.model, "afm or fm");
  train->add_option("--dataset", tr.dataset, "Dataset directory");
  train->add_option("--max-steps", tr.max_steps, "Optimizer steps");
  train->add_option("--log-every", tr.log_every, "Print the smoothed loss every N steps");

  ForecastFlags fc;
  auto* forecast = app.add_subcommand("forecast", "Sample forecast ensembles for the test trajectories");
  add_common(forecast, fc.common);
  forecast->add_option("--model", fc.model, "Model directory");
  forecast->add_option("--dataset", fc.dataset, "Dataset directory");
  forecast->add_option("--samples", fc.samples, "Sample paths per instance");
  forecast->add_option("--horizon", fc.horizon, "Forecast steps (default predict + extrapolate)");

  EvaluateFlags ev;
  auto* evaluate = app.add_subcommand("evaluate", "Score forecasts with CRPS and NRMSE");
  add_common(evaluate, ev.common);
  evaluate->add_option("--forecast", ev.forecasts, "forecast.csv or its directory; repeat once per seed")->delimiter(',');
  evaluate->add_option("--dataset", ev.dataset, "Dataset directory");
  evaluate->add_option("--model-kind", ev.model_kind, "Label for the model_kind column");
  evaluate->add_flag("--breakdown", ev.breakdown, "Print per-dimension and per-step metrics");

  ReproFlags rp;
  auto* repro = app.add_subcommand("repro", "Simulate, train both models, forecast and evaluate");
  add_common(repro, rp.common);
  repro->add_option("--systems", rp.systems, "Comma-separated systems");
  repro->add_option("--seeds", rp.seeds, "Number of seeds, counted up from --seed");
  repro->add_flag("--keep-forecasts", rp.keep_forecasts, "Also write every forecast.csv");

  std::vector<std::string> argv_store{"afm"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  util::set_log_level(quiet ? util::LogLevel::kQuiet : verbose ? util::LogLevel::kInfo : util::LogLevel::kWarn);
  if (tr.log_every > 0 && !quiet) util::set_log_level(util::LogLevel::kInfo);

  try {
    if (simulate->parsed()) return cmd_simulate(sim, out);
    if (train->parsed()) return cmd_train(tr, out);
    if (forecast->parsed()) return cmd_forecast(fc, out);
    if (evaluate->parsed()) return cmd_evaluate(ev, out);
    if (repro->parsed()) return cmd_repro(rp, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

int main_entry(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace afm::cli
