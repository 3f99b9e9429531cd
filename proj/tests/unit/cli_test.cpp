#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <sstream>

#include "afm/ar/ensemble.hpp"
#include "afm/cli/cli.hpp"
#include "afm/cli/config.hpp"
#include "afm/dynsys/dataset.hpp"
#include "afm/errors.hpp"
#include "afm/metrics/metrics.hpp"
#include "afm/util/text.hpp"

using namespace afm;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("afm_cli_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::size_t line_count(const std::string& text) { return std::count(text.begin(), text.end(), '\n'); }

// A smoke-sized lorenz dataset shared by the command tests.
const TempDir& shared_data() {
  static TempDir dir;
  static bool made = false;
  if (!made) {
    REQUIRE(run({"simulate", "--system", "lorenz", "--train", "16", "--test", "4", "--seed", "5", "--out",
                 dir / "data"})
                .code == cli::kExitOk);
    made = true;
  }
  return dir;
}

// Ensembles whose every path is the true test trajectory.
std::vector<ar::ForecastEnsemble> perfect_ensembles(const dyn::ForecastDataset& ds, std::size_t horizon) {
  std::vector<ar::ForecastEnsemble> out;
  for (const auto& traj : ds.test) {
    ar::ForecastEnsemble e;
    e.instance_id = traj.id;
    e.start = ds.split.observe;
    e.horizon = horizon;
    e.dim = ds.dim;
    num::Matrix path(horizon, ds.dim);
    for (std::size_t t = 0; t < horizon; ++t) {
      for (std::size_t d = 0; d < ds.dim; ++d) path(t, d) = traj.states(ds.split.observe + t, d);
    }
    e.samples = {path, path, path};
    e.sample_ids = {0, 1, 2};
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace

TEST_CASE("config: presets, overlays and rejection") {
  const auto full = cli::preset(cli::Scale::kFull);
  CHECK(full.n_train == 2000);
  CHECK(full.n_test == 400);
  CHECK(full.samples == 100);
  const auto smoke = cli::preset(cli::Scale::kSmoke);
  CHECK(smoke.n_train < full.n_train);
  CHECK(smoke.afm.max_steps < full.afm.max_steps);
  CHECK_NOTHROW(cli::validate(smoke));
  CHECK(cli::parse_scale("desk") == cli::Scale::kDesk);
  CHECK_THROWS_AS(cli::parse_scale("huge"), ValidationError);

  auto doc = nlohmann::json::parse(R"({"system":"lorenz","seeds":[3,4],"afm":{"window":4,"lr":0.01},
                                       "fm":{"weighted_loss":false},"forecast":{"samples":7}})");
  const auto cfg = cli::apply_json(doc, smoke);
  CHECK(cfg.system == "lorenz");
  CHECK(cfg.system_set);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{3, 4});
  CHECK(cfg.afm.window == 4);
  CHECK(cfg.afm.lr == 0.01);
  CHECK_FALSE(cfg.fm.weighted_loss);
  CHECK(cfg.samples == 7);
  CHECK(cfg.afm.max_steps == smoke.afm.max_steps);

  const auto again = cli::apply_json(cli::to_json(cfg), full);
  CHECK(cli::to_json(again) == cli::to_json(cfg));

  auto rejects = [&](const char* text, const char* key) {
    try {
      cli::validate(cli::apply_json(nlohmann::json::parse(text), smoke));
      FAIL("accepted " << text);
    } catch (const ValidationError& e) {
      CHECK_MESSAGE(std::string(e.what()).find(key) != std::string::npos, e.what());
    }
  };
  rejects(R"({"sytem":"lorenz"})", "sytem");
  rejects(R"({"afm":{"windw":3}})", "afm.windw");
  rejects(R"({"afm":{"window":"three"}})", "afm.window");
  rejects(R"({"fm":{"batch_size":-1}})", "fm.batch_size");
  rejects(R"({"system":"pendulum"})", "pendulum");
  rejects(R"({"forecast":{"samples":1}})", "samples");
  rejects(R"({"seeds":[]})", "seeds");
  rejects(R"({"afm":{"embed_dim":7}})", "embed_dim");
}

TEST_CASE("cli: parse errors, help and unknown commands") {
  CHECK(run({"--help"}).code == cli::kExitOk);
  CHECK(run({"simulate", "--help"}).code == cli::kExitOk);
  CHECK(run({}).code == cli::kExitValidation);
  CHECK(run({"launch"}).code == cli::kExitValidation);
  CHECK(run({"train", "--bogus"}).code == cli::kExitValidation);
  CHECK(run({"forecast", "--samples", "many"}).code == cli::kExitValidation);
}

TEST_CASE("simulate: deterministic output and output-directory guard") {
  TempDir tmp;
  const std::vector<std::string> base{"simulate", "--system", "van_der_pol", "--train", "6", "--test", "2", "--seed", "9"};
  auto with_out = [&](const std::string& dir) {
    auto a = base;
    a.push_back("--out");
    a.push_back(dir);
    return a;
  };
  const auto first = run(with_out(tmp / "a"));
  REQUIRE(first.code == cli::kExitOk);
  CHECK(first.out.find("8 trajectories") != std::string::npos);
  REQUIRE(run(with_out(tmp / "b")).code == cli::kExitOk);
  for (const char* file : {"meta.json", "train.csv", "test.csv"}) {
    CHECK(util::read_file(tmp.path / "a" / file) == util::read_file(tmp.path / "b" / file));
  }
  CHECK(dyn::dataset_id(tmp.path / "a") == dyn::dataset_id(tmp.path / "b"));

  const auto refused = run(with_out(tmp / "a"));
  CHECK(refused.code == cli::kExitValidation);
  CHECK(refused.err.find("--force") != std::string::npos);
  auto forced = with_out(tmp / "a");
  forced.push_back("--force");
  CHECK(run(forced).code == cli::kExitOk);
  CHECK_FALSE(fs::exists(tmp.path / "a" / ".afm.lock"));

  fs::create_directories(tmp.path / "c");
  util::write_file(tmp.path / "c" / ".afm.lock", "1\n");
  auto locked = with_out(tmp / "c");
  locked.push_back("--force");
  const auto busy = run(locked);
  CHECK(busy.code == cli::kExitValidation);
  CHECK(busy.err.find("in use") != std::string::npos);

  util::write_file(tmp.path / "file", "x");
  CHECK(run(with_out(tmp / "file")).code == cli::kExitValidation);
  CHECK(run({"simulate", "--system", "pendulum", "--out", tmp / "d"}).code == cli::kExitValidation);
}

TEST_CASE("train, forecast and evaluate on a smoke dataset") {
  const auto& data = shared_data();
  TempDir tmp;
  const std::string ds_dir = data / "data";
  const auto ds = dyn::load_dataset(ds_dir);

  for (const std::string kind : {"afm", "fm"}) {
    CAPTURE(kind);
    const std::string model = tmp / (kind + "_model");
    const auto trained = run({"train", "--model", kind, "--dataset", ds_dir, "--scale", "smoke", "--max-steps", "10",
                              "--seed", "1", "--out", model});
    REQUIRE_MESSAGE(trained.code == cli::kExitOk, trained.err);
    const std::string log = util::read_file(fs::path(model) / "train_log.csv");
    CHECK(log.rfind("step,loss,wall_time\n", 0) == 0);
    CHECK(line_count(log) == 11);

    const std::string f1 = tmp / (kind + "_f1"), f2 = tmp / (kind + "_f2");
    for (const auto& out : {f1, f2}) {
      const auto r = run({"forecast", "--model", model, "--dataset", ds_dir, "--samples", "2", "--seed", "3", "--out", out});
      REQUIRE_MESSAGE(r.code == cli::kExitOk, r.err);
    }
    const std::string csv = util::read_file(fs::path(f1) / "forecast.csv");
    CHECK(csv == util::read_file(fs::path(f2) / "forecast.csv"));
    CHECK(util::read_file(fs::path(f1) / "quantiles.csv") == util::read_file(fs::path(f2) / "quantiles.csv"));
    const auto ens = ar::read_forecast_csv(fs::path(f1) / "forecast.csv");
    REQUIRE(ens.size() == ds.test.size());
    for (const auto& e : ens) {
      CHECK(e.size() + e.failed == 2);
      CHECK(e.horizon == ds.split.predict + ds.split.extrapolate);
      CHECK(e.start == ds.split.observe);
    }

    const auto ev = run({"evaluate", "--forecast", f1, "--forecast", f2, "--dataset", ds_dir, "--model-kind", kind,
                         "--out", tmp / (kind + "_eval")});
    REQUIRE_MESSAGE(ev.code == cli::kExitOk, ev.err);
    const auto rows = metrics::read_metrics_csv(fs::path(tmp / (kind + "_eval")) / "metrics.csv");
    REQUIRE(rows.size() == 4);
    for (const auto& r : rows) {
      CHECK(r.model_kind == kind);
      CHECK(r.system == "lorenz");
      CHECK(r.seed_count == 2);
      CHECK(std::isfinite(r.mean));
      REQUIRE(r.std_err.has_value());
      CHECK(*r.std_err == 0.0);  // identical forecasts
    }
  }

  // Model trained on lorenz cannot forecast a 2-d system.
  const auto other = run({"simulate", "--system", "brusselator", "--train", "6", "--test", "2", "--out", tmp / "bru"});
  REQUIRE(other.code == cli::kExitOk);
  const auto mismatch = run({"forecast", "--model", tmp / "afm_model", "--dataset", tmp / "bru", "--out", tmp / "mm"});
  CHECK(mismatch.code == cli::kExitValidation);
  CHECK(mismatch.err.find("dimensions") != std::string::npos);

  // A config naming another system is rejected before training.
  util::write_file(tmp.path / "cfg.json", R"({"system":"brusselator"})");
  const auto wrong = run({"train", "--config", tmp / "cfg.json", "--dataset", ds_dir, "--scale", "smoke", "--out",
                          tmp / "wrong"});
  CHECK(wrong.code == cli::kExitValidation);
  CHECK_FALSE(fs::exists(tmp.path / "wrong" / "model.json"));

  // Same sizes and system but another normalization.
  const auto resim = run({"simulate", "--system", "lorenz", "--train", "16", "--test", "4", "--seed", "6", "--out",
                          tmp / "lorenz6"});
  REQUIRE(resim.code == cli::kExitOk);
  const auto renorm = run({"forecast", "--model", tmp / "afm_model", "--dataset", tmp / "lorenz6", "--out", tmp / "rn"});
  CHECK(renorm.code == cli::kExitValidation);
  CHECK(renorm.err.find("normalization") != std::string::npos);

  CHECK(run({"forecast", "--model", tmp / "missing", "--dataset", ds_dir, "--out", tmp / "x"}).code != cli::kExitOk);
}

TEST_CASE("evaluate: perfect and partial forecasts") {
  const auto& data = shared_data();
  TempDir tmp;
  const std::string ds_dir = data / "data";
  const auto ds = dyn::load_dataset(ds_dir);

  fs::create_directories(tmp.path / "perfect");
  ar::write_forecast_csv(tmp.path / "perfect" / "forecast.csv",
                         perfect_ensembles(ds, ds.split.predict + ds.split.extrapolate));
  const auto ok = run({"evaluate", "--forecast", tmp / "perfect", "--dataset", ds_dir, "--out", tmp / "e1",
                       "--breakdown"});
  REQUIRE_MESSAGE(ok.code == cli::kExitOk, ok.err);
  CHECK(ok.out.find("regime,metric,axis,index,value") != std::string::npos);
  const auto rows = metrics::read_metrics_csv(fs::path(tmp / "e1") / "metrics.csv");
  REQUIRE(rows.size() == 4);
  for (const auto& r : rows) {
    CHECK(r.mean == 0.0);
    CHECK(r.seed_count == 1);
    CHECK_FALSE(r.std_err.has_value());
  }

  // Prediction window only: extrapolation is reported missing, not an error.
  ar::write_forecast_csv(tmp.path / "short.csv", perfect_ensembles(ds, ds.split.predict));
  const auto partial = run({"evaluate", "--forecast", tmp / "short.csv", "--dataset", ds_dir, "--out", tmp / "e2"});
  REQUIRE_MESSAGE(partial.code == cli::kExitOk, partial.err);
  CHECK(partial.out.find("extrapolation missing") != std::string::npos);
  const auto part_rows = metrics::read_metrics_csv(fs::path(tmp / "e2") / "metrics.csv");
  REQUIRE(part_rows.size() == 2);
  for (const auto& r : part_rows) CHECK(r.regime == "prediction");

  CHECK(run({"evaluate", "--dataset", ds_dir, "--out", tmp / "e3"}).code == cli::kExitValidation);
}

TEST_CASE("repro: smoke run layout and byte reproducibility") {
  TempDir tmp;
  const std::vector<std::string> args{"repro", "--systems", "brusselator", "--seeds", "2", "--scale", "smoke"};
  auto at = [&](const std::string& dir) {
    auto a = args;
    a.push_back("--out");
    a.push_back(dir);
    return a;
  };
  const auto first = run(at(tmp / "r1"));
  REQUIRE_MESSAGE(first.code == cli::kExitOk, first.err);
  REQUIRE(run(at(tmp / "r2")).code == cli::kExitOk);
  const std::string metrics_csv = util::read_file(tmp.path / "r1" / "metrics.csv");
  CHECK(metrics_csv == util::read_file(tmp.path / "r2" / "metrics.csv"));
  CHECK(util::read_file(tmp.path / "r1" / "report.csv") == util::read_file(tmp.path / "r2" / "report.csv"));

  const auto rows = metrics::read_metrics_csv(tmp.path / "r1" / "metrics.csv");
  CHECK(rows.size() == 8);
  for (const auto& r : rows) CHECK(r.seed_count == 2);
  for (const char* kind : {"afm", "fm"}) {
    for (const char* seed : {"seed0", "seed1"}) {
      const fs::path run_dir = tmp.path / "r1" / "brusselator" / seed / kind;
      CHECK(fs::exists(run_dir / "model" / "model.json"));
      CHECK(fs::exists(run_dir / "quantiles.csv"));
      CHECK(fs::exists(run_dir / "metrics.csv"));
      CHECK_FALSE(fs::exists(run_dir / "forecast.csv"));
    }
  }
  // header + 2 kinds x (2 seeds + aggregate) x 4 rows
  CHECK(line_count(util::read_file(tmp.path / "r1" / "report.csv")) == 1 + 2 * 3 * 4);
  CHECK(run(at(tmp / "r1")).code == cli::kExitValidation);

  auto bad = args;
  bad[2] = "brusselator,pendulum";
  bad.insert(bad.end(), {"--out", tmp / "r3"});
  CHECK(run(bad).code == cli::kExitValidation);
}
