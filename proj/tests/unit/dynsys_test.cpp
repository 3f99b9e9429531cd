#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "afm/dynsys/dataset.hpp"
#include "afm/util/text.hpp"

using namespace afm::dyn;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("afm_dynsys_test_" + name);
  fs::remove_all(p);
  return p;
}

SdeSystem deterministic(SystemKind kind) {
  SdeSystem s = make_system(kind);
  s.diffusion.assign(s.dim, 0.0);
  return s;
}

}  // namespace

TEST_CASE("drift: hand-evaluated Table values") {
  const auto lorenz = drift(make_system(SystemKind::kLorenz), std::vector<double>{1, 1, 1});
  CHECK(lorenz[0] == doctest::Approx(0.0));
  CHECK(lorenz[1] == doctest::Approx(26.0));
  CHECK(lorenz[2] == doctest::Approx(-5.0 / 3.0));

  const auto vdp = drift(make_system(SystemKind::kVanDerPol), std::vector<double>{0, 0});
  CHECK(vdp[0] == 0.0);
  CHECK(vdp[1] == 0.0);

  const auto lv = drift(make_system(SystemKind::kLotkaVolterra), std::vector<double>{1, 1});
  CHECK(lv[0] == doctest::Approx(0.4));
  CHECK(lv[1] == doctest::Approx(-1.0));
}

TEST_CASE("systems: parameters, diffusion, ranges and intervals") {
  const SdeSystem lorenz = make_system(SystemKind::kLorenz);
  CHECK(lorenz.param("sigma") == 10.0);
  CHECK(lorenz.param("rho") == 28.0);
  CHECK(lorenz.param("beta") == 8.0 / 3.0);
  CHECK(lorenz.init_range[0] == std::pair{0.0, 10.0});
  CHECK(lorenz.t1 == 2.0);

  const SdeSystem fhn = make_system(SystemKind::kFitzHughNagumo);
  CHECK(fhn.param("a") == 0.7);
  CHECK(fhn.param("b") == 0.8);
  CHECK(fhn.param("tau") == 12.5);
  CHECK(fhn.param("I") == 0.5);
  CHECK(fhn.init_range[1] == std::pair{-2.0, 2.0});
  CHECK(fhn.t1 == 10.0);

  const SdeSystem lv = make_system(SystemKind::kLotkaVolterra);
  CHECK(lv.param("alpha") == 1.3);
  CHECK(lv.param("beta") == 0.9);
  CHECK(lv.param("gamma") == 0.8);
  CHECK(lv.param("delta") == 1.8);
  CHECK(lv.init_range[0] == std::pair{0.0, 5.0});
  CHECK(lv.t1 == 20.0);

  const SdeSystem brus = make_system(SystemKind::kBrusselator);
  CHECK(brus.param("A") == 1.0);
  CHECK(brus.param("B") == 3.0);
  CHECK(brus.init_range[0] == std::pair{0.0, 2.0});
  CHECK(brus.t1 == 20.0);

  const SdeSystem vdp = make_system(SystemKind::kVanDerPol);
  CHECK(vdp.param("mu") == 0.1);
  CHECK(vdp.init_range[0] == std::pair{-2.0, 2.0});
  CHECK(vdp.t1 == 20.0);

  for (SystemKind k : all_systems()) {
    const SdeSystem s = make_system(k);
    CHECK(s.t0 == 0.0);
    CHECK(s.steps == 200);
    REQUIRE(s.diffusion.size() == s.dim);
    for (double d : s.diffusion) CHECK(d == 1.5);
    CHECK(system_by_name(s.name).kind == k);
  }
  CHECK_THROWS_AS(system_by_name("rossler"), afm::ValidationError);
}

TEST_CASE("euler_heun_step: exact cases") {
  const std::vector<double> x{1.0};
  const std::vector<double> zero{0.0};
  std::vector<double> f0(1), pred(1), f1(1);

  std::vector<double> y = x;
  euler_heun_step([](std::span<const double>, std::span<double> o) { o[0] = 0.0; }, std::span<double>(y), 0.3,
                  zero, f0, pred, f1);
  CHECK(y[0] == 1.0);

  y = x;
  euler_heun_step([](std::span<const double>, std::span<double> o) { o[0] = 2.5; }, std::span<double>(y), 0.1,
                  zero, f0, pred, f1);
  CHECK(y[0] == 1.0 + 2.5 * 0.1);

  y = x;
  euler_heun_step([](std::span<const double> s, std::span<double> o) { o[0] = -s[0]; }, std::span<double>(y),
                  0.1, zero, f0, pred, f1);
  CHECK(y[0] == doctest::Approx(0.905).epsilon(1e-14));
}

TEST_CASE("euler_heun_step: system form scales dW by the diffusion") {
  SdeSystem vdp = make_system(SystemKind::kVanDerPol);
  const auto next = euler_heun_step(vdp, std::vector<double>{0, 0}, 0.01, std::vector<double>{0.1, -0.2});
  // Fixed point drift vanishes at the origin; the noise enters as 1.5*dW, and
  // the corrector picks up the drift at the predicted point.
  CHECK(next[0] == doctest::Approx(0.15 + 0.5 * 0.01 * (-0.3)));
  CHECK_THROWS_AS(euler_heun_step(vdp, std::vector<double>{0, 0}, 0.0, std::vector<double>{0, 0}),
                  afm::ValidationError);
}

TEST_CASE("simulate: deterministic fixed point stays put") {
  const Trajectory t = simulate(deterministic(SystemKind::kVanDerPol), std::vector<double>{0, 0}, 1u);
  REQUIRE(t.states.rows() == 200);
  for (double v : t.states.values()) CHECK(v == 0.0);
  CHECK(t.times.front() == 0.0);
  CHECK(t.times.back() == doctest::Approx(20.0));
  for (std::size_t k = 1; k < t.times.size(); ++k) {
    CHECK(t.times[k] - t.times[k - 1] == doctest::Approx(20.0 / 199.0));
  }
}

TEST_CASE("simulate: same seed gives identical trajectories") {
  const SdeSystem s = make_system(SystemKind::kLorenz);
  const std::vector<double> x0{1, 2, 3};
  CHECK(simulate(s, x0, 9u).states == simulate(s, x0, 9u).states);
  CHECK_FALSE(simulate(s, x0, 9u).states == simulate(s, x0, 10u).states);
}

TEST_CASE("simulate: Heun is second order on deterministic Lorenz") {
  const SdeSystem s = deterministic(SystemKind::kLorenz);
  const std::vector<double> x0{1, 1, 1};
  auto endpoint = [&](std::size_t substeps) {
    const Trajectory t = simulate(s, x0, 0u, {.substeps = substeps});
    return std::vector<double>(t.states.row(199).begin(), t.states.row(199).end());
  };
  const auto a = endpoint(4), b = endpoint(8), c = endpoint(16);
  auto dist = [](const std::vector<double>& u, const std::vector<double>& v) {
    double acc = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) acc += (u[i] - v[i]) * (u[i] - v[i]);
    return std::sqrt(acc);
  };
  const double order = std::log2(dist(a, b) / dist(b, c));
  CHECK(order >= 1.8);
}

TEST_CASE("simulate: deterministic Lotka-Volterra conserves its first integral") {
  const SdeSystem s = deterministic(SystemKind::kLotkaVolterra);
  const double alpha = s.param("alpha"), beta = s.param("beta"), gamma = s.param("gamma"), delta = s.param("delta");
  auto invariant = [&](std::span<const double> x) {
    return gamma * x[0] - delta * std::log(x[0]) + beta * x[1] - alpha * std::log(x[1]);
  };
  afm::num::Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x0 = sample_initial_condition(s, rng);
    const Trajectory t = simulate(s, x0, rng);
    const double v0 = invariant(t.states.row(0));
    for (std::size_t k = 1; k < t.states.rows(); ++k) {
      CHECK(std::abs(invariant(t.states.row(k)) - v0) / std::abs(v0) < 0.01);
    }
  }
}

TEST_CASE("simulate: divergence is reported") {
  SdeSystem s = make_system(SystemKind::kLorenz);
  CHECK_THROWS_AS(simulate(s, std::vector<double>{1, 1, 1}, 0u, {.divergence_threshold = 1.0}), DivergenceError);
}

TEST_CASE("generate_dataset: full protocol counts and split") {
  const ForecastDataset ds = generate_dataset(make_system(SystemKind::kBrusselator), 2000, 400, 7);
  CHECK(ds.train.size() == 2000);
  CHECK(ds.test.size() == 400);
  CHECK(ds.split.observe + ds.split.predict + ds.split.extrapolate == 200);
  std::vector<bool> seen(2400, false);
  for (const auto& t : ds.train) seen.at(t.id) = true;
  for (const auto& t : ds.test) {
    CHECK_FALSE(seen.at(t.id));
    seen.at(t.id) = true;
  }
  for (const auto& t : ds.train) {
    // Initial conditions come from the Table range.
    for (double v : t.states.row(0)) CHECK((v >= 0.0 && v <= 2.0));
  }
}

TEST_CASE("generate_dataset: minimal 1/1 dataset") {
  const ForecastDataset ds = generate_dataset(make_system(SystemKind::kVanDerPol), 1, 1, 3);
  CHECK(ds.train.size() == 1);
  CHECK(ds.test.size() == 1);
  CHECK(ds.train[0].id != ds.test[0].id);
  CHECK(ds.normalization.mean.size() == 2);
  CHECK_THROWS_AS(generate_dataset(make_system(SystemKind::kVanDerPol), 0, 1, 3), afm::ValidationError);
}

TEST_CASE("generate_dataset: normalization ignores test trajectories") {
  const ForecastDataset ds = generate_dataset(make_system(SystemKind::kLotkaVolterra), 20, 5, 11);
  const Normalization refit = fit_normalization(ds.train, ds.split);
  CHECK(refit.mean == ds.normalization.mean);
  CHECK(refit.stddev == ds.normalization.stddev);

  ForecastDataset perturbed = ds;
  for (auto& t : perturbed.test) t.states.fill(1e3);
  const Normalization again = fit_normalization(perturbed.train, perturbed.split);
  CHECK(again.mean == ds.normalization.mean);
}

TEST_CASE("generate_dataset: too many divergent simulations abort") {
  GenerateOptions opt;
  opt.simulate.divergence_threshold = 30.0;  // Lorenz routinely exceeds this
  CHECK_THROWS_AS(generate_dataset(make_system(SystemKind::kLorenz), 20, 5, 1, opt), afm::NumericalError);
}

TEST_CASE("dataset files: same seed gives byte-identical output and loads back exactly") {
  const SdeSystem s = make_system(SystemKind::kFitzHughNagumo);
  const fs::path a = scratch_dir("a"), b = scratch_dir("b");
  save_dataset(generate_dataset(s, 6, 3, 42), a);
  save_dataset(generate_dataset(s, 6, 3, 42), b);
  for (const char* f : {"meta.json", "train.csv", "test.csv"}) {
    CHECK(afm::util::read_file(a / f) == afm::util::read_file(b / f));
  }
  CHECK(dataset_id(a) == dataset_id(b));

  const ForecastDataset original = generate_dataset(s, 6, 3, 42);
  const ForecastDataset loaded = load_dataset(a);
  CHECK(loaded.system == "fitzhugh_nagumo");
  CHECK(loaded.dim == 2);
  REQUIRE(loaded.train.size() == 6);
  REQUIRE(loaded.test.size() == 3);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(loaded.train[i].states == original.train[i].states);
    CHECK(loaded.train[i].times == original.train[i].times);
  }
  CHECK(loaded.normalization.id() == original.normalization.id());
  CHECK(loaded.params.size() == 4);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("dataset files: malformed CSV is rejected") {
  const fs::path dir = scratch_dir("bad");
  save_dataset(generate_dataset(make_system(SystemKind::kVanDerPol), 2, 1, 1), dir);
  afm::util::write_file(dir / "test.csv", "trajectory_id,step_index,t,x_1\n2,0,0,1\n");
  CHECK_THROWS_AS(load_dataset(dir), afm::ValidationError);
  fs::remove_all(dir);
}
