#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "afm/fmbase/fm.hpp"
#include "test_datasets.hpp"

using namespace afm;
using afm::testing::custom_dataset;
using afm::testing::hold;

namespace {

fm::FmArchitecture tiny_arch() {
  return {.encoder_hidden = 8, .encoder_layers = 1, .context_dim = 8, .seq_hidden = 8, .seq_layers = 1, .embed_dim = 8};
}

num::Matrix random_matrix(std::size_t r, std::size_t c, num::Rng& rng) {
  num::Matrix m(r, c);
  rng.fill_normal(m.values());
  return m;
}

double max_abs_diff(const num::Matrix& a, const num::Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

// Monte Carlo estimate of the initial loss: the velocity field starts at zero,
// so the loss is the expected (weighted) squared norm of the regression target.
double initial_loss_oracle(const dyn::ForecastDataset& ds, const fm::BrownianCovariance& cov, double sigma,
                           bool weighted, int draws) {
  const std::size_t f = cov.size();
  num::Rng rng(77);
  double acc = 0.0;
  for (int i = 0; i < draws; ++i) {
    const num::Matrix z = ds.normalization.normalize(ds.train[rng.index(ds.train.size())].states);
    num::Matrix y1(f, ds.dim);
    for (std::size_t t = 0; t < f; ++t) {
      for (std::size_t d = 0; d < ds.dim; ++d) y1(t, d) = z(ds.split.observe + t, d);
    }
    const double s = rng.uniform();
    const num::Matrix y0 = cov.sample(ds.dim, rng);
    const num::Matrix y = fm::bridge_sample(y0, y1, s, cov, {.sigma_bridge = sigma}, rng);
    const num::Matrix r = fm::fm_velocity_target(y, y0, y1, s, cov, {.sigma_bridge = sigma});
    const num::Matrix sr = weighted ? cov.solve(r) : r;
    for (std::size_t k = 0; k < r.size(); ++k) acc += r.values()[k] * sr.values()[k];
  }
  return acc / draws;
}

}  // namespace

TEST_CASE("Brownian covariance: small example and normalization") {
  fm::BrownianCovariance cov(2, 1.0);
  CHECK(cov.matrix()(0, 0) == 1.0);
  CHECK(cov.matrix()(0, 1) == 1.0);
  CHECK(cov.matrix()(1, 1) == 2.0);
  CHECK(cov.cholesky()(0, 0) == doctest::Approx(1.0));
  CHECK(cov.cholesky()(0, 1) == 0.0);
  CHECK(cov.cholesky()(1, 0) == doctest::Approx(1.0));
  CHECK(cov.cholesky()(1, 1) == doctest::Approx(1.0));

  for (std::size_t f : {1, 5, 75}) {
    auto n = fm::BrownianCovariance::normalized(f);
    CHECK(n.delta() == doctest::Approx(2.0 / (f + 1)));
    double trace = 0.0;
    for (std::size_t k = 0; k < f; ++k) trace += n.matrix()(k, k);
    CHECK(trace / f == doctest::Approx(1.0));
  }
  CHECK_THROWS_AS(fm::BrownianCovariance(0, 1.0), ValidationError);
  CHECK_THROWS_AS(fm::BrownianCovariance(3, 0.0), ValidationError);
}

TEST_CASE("Brownian covariance: solve, whiten and apply are consistent") {
  num::Rng rng(3);
  auto cov = fm::BrownianCovariance::normalized(75);
  const num::Matrix y = random_matrix(75, 3, rng);
  CHECK(max_abs_diff(cov.apply(cov.solve(y)), y) < 1e-8);
  CHECK(max_abs_diff(cov.solve(cov.apply(y)), y) < 1e-8);

  // ||L^-1 y||^2 = y^T Sigma^-1 y per column; Sigma^-1 of Brownian motion is
  // the scaled second-difference matrix, so y^T Sigma^-1 y = sum of squared
  // increments over delta.
  const num::Matrix w = cov.whiten(y);
  for (std::size_t d = 0; d < 3; ++d) {
    double whitened = 0.0, increments = 0.0;
    for (std::size_t k = 0; k < 75; ++k) {
      whitened += w(k, d) * w(k, d);
      const double inc = y(k, d) - (k == 0 ? 0.0 : y(k - 1, d));
      increments += inc * inc;
    }
    CHECK(whitened == doctest::Approx(increments / cov.delta()).epsilon(1e-9));
  }
  CHECK_THROWS_AS(cov.solve(num::Matrix(74, 1)), ValidationError);
}

TEST_CASE("Brownian covariance: samples have the Brownian second moments") {
  fm::BrownianCovariance cov(6, 0.5);
  num::Rng rng(10);
  const int draws = 10000;
  num::Matrix second(6, 6);
  for (int i = 0; i < draws; ++i) {
    const num::Matrix x = cov.sample(1, rng);
    for (std::size_t a = 0; a < 6; ++a) {
      for (std::size_t b = 0; b < 6; ++b) second(a, b) += x(a, 0) * x(b, 0) / draws;
    }
  }
  for (std::size_t a = 0; a < 6; ++a) {
    for (std::size_t b = 0; b < 6; ++b) {
      const double expected = 0.5 * static_cast<double>(std::min(a, b) + 1);
      CHECK(std::abs(second(a, b) - expected) < 0.06 * std::max(expected, 1.0));
    }
  }
}

TEST_CASE("bridge path: pinned endpoints and variance") {
  auto cov = fm::BrownianCovariance::normalized(10);
  num::Rng rng(1);
  const num::Matrix y0 = random_matrix(10, 2, rng);
  const num::Matrix y1 = random_matrix(10, 2, rng);
  const fm::BaselinePathConfig cfg{.sigma_bridge = 0.1};
  CHECK(fm::bridge_sample(y0, y1, 0.0, cov, cfg, rng) == y0);
  CHECK(fm::bridge_sample(y0, y1, 1.0, cov, cfg, rng) == y1);

  const int draws = 20000;
  const double s = 0.3;
  num::Matrix mean(10, 2), var(10, 2);
  for (int i = 0; i < draws; ++i) {
    const num::Matrix y = fm::bridge_sample(y0, y1, s, cov, cfg, rng);
    for (std::size_t k = 0; k < y.size(); ++k) {
      const double dev = y.values()[k] - ((1 - s) * y0.values()[k] + s * y1.values()[k]);
      mean.values()[k] += dev / draws;
      var.values()[k] += dev * dev / draws;
    }
  }
  for (std::size_t k = 0; k < 10; ++k) {
    const double expected = 0.01 * s * (1 - s) * cov.matrix()(k, k);
    for (std::size_t d = 0; d < 2; ++d) {
      CHECK(std::abs(mean(k, d)) < 4.0 * std::sqrt(expected / draws));
      CHECK(var(k, d) == doctest::Approx(expected).epsilon(0.05));
    }
  }
  CHECK_THROWS_AS(fm::bridge_sample(y0, y1, 1.5, cov, cfg, rng), ValidationError);
  CHECK_THROWS_AS(fm::bridge_sample(y0, num::Matrix(10, 3), 0.5, cov, cfg, rng), ValidationError);
  CHECK_THROWS_AS(fm::bridge_sample(y0, y1, 0.5, cov, {.sigma_bridge = -1.0}, rng), ValidationError);
}

TEST_CASE("bridge velocity target") {
  auto cov = fm::BrownianCovariance::normalized(8);
  num::Rng rng(2);
  const num::Matrix y0 = random_matrix(8, 2, rng);
  const num::Matrix y1 = random_matrix(8, 2, rng);
  const num::Matrix y = random_matrix(8, 2, rng);
  num::Matrix diff(8, 2);
  for (std::size_t k = 0; k < diff.size(); ++k) diff.values()[k] = y1.values()[k] - y0.values()[k];

  CHECK(max_abs_diff(fm::fm_velocity_target(y, y0, y1, 0.2, cov, {.sigma_bridge = 0.0}), diff) == 0.0);
  CHECK(max_abs_diff(fm::fm_velocity_target(y, y0, y1, 0.5, cov, {.sigma_bridge = 0.3}), diff) < 1e-14);
  num::Matrix on_mean(8, 2);
  for (std::size_t k = 0; k < diff.size(); ++k) on_mean.values()[k] = 0.6 * y0.values()[k] + 0.4 * y1.values()[k];
  CHECK(max_abs_diff(fm::fm_velocity_target(on_mean, y0, y1, 0.4, cov, {.sigma_bridge = 0.3}), diff) < 1e-12);

  // Y = m_s + Sigma v gives a correction of exactly sigma^2 (1 - 2s) / 2 v.
  const num::Matrix v = random_matrix(8, 2, rng);
  const num::Matrix sv = cov.apply(v);
  const double s = 0.1, sigma = 0.2;
  num::Matrix yv(8, 2);
  for (std::size_t k = 0; k < yv.size(); ++k) {
    yv.values()[k] = (1 - s) * y0.values()[k] + s * y1.values()[k] + sv.values()[k];
  }
  const num::Matrix t = fm::fm_velocity_target(yv, y0, y1, s, cov, {.sigma_bridge = sigma});
  for (std::size_t k = 0; k < t.size(); ++k) {
    CHECK(t.values()[k] == doctest::Approx(diff.values()[k] + sigma * sigma * (1 - 2 * s) / 2 * v.values()[k]));
  }
}

TEST_CASE("FM model: zero initial velocity, fixed output length, reproducible sampling") {
  auto ds = dyn::generate_dataset(dyn::system_by_name("brusselator"), 6, 3, 4);
  fm::FmModel model({.dim = 2, .window = 5, .horizon = 75, .arch = tiny_arch(), .normalization = ds.normalization}, 1);
  num::Tape tape(&model.params());
  const num::Var h = tape.input(4, 5 * 2);
  const num::Var y = tape.input(4, 75 * 2);
  const num::Var e = tape.input(4, 8);
  model.record(tape, h, y, {}, e);
  num::Rng rng(0);
  const num::Matrix inputs[] = {random_matrix(4, 10, rng), random_matrix(4, 150, rng), random_matrix(4, 8, rng)};
  const num::Matrix& out = tape.forward(inputs);
  CHECK(out.rows() == 4);
  CHECK(out.cols() == 150);
  for (double v : out.values()) CHECK(v == 0.0);

  const auto held_out = ar::test_inputs(ds, 75);
  auto a = fm::fm_forecast(model, held_out, 3, 8);
  auto b = fm::fm_forecast(model, held_out, 3, 8);
  REQUIRE(a.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a[i].horizon == 75);
    CHECK(a[i].start == 75);
    REQUIRE(a[i].samples.size() == 3);
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(a[i].samples[j].rows() == 75);
      CHECK(a[i].samples[j] == b[i].samples[j]);
    }
    CHECK(a[i].samples[0] != a[i].samples[1]);
  }

  // A zero field leaves the Brownian base draw untouched.
  num::Rng base_rng(num::derive_seed(num::derive_seed(8, held_out[1].instance_id), 2));
  const num::Matrix base = ds.normalization.denormalize(model.covariance().sample(2, base_rng));
  CHECK(max_abs_diff(a[1].samples[2], base) < 1e-12);

  CHECK_THROWS_AS(fm::fm_forecast(model, held_out, 0, 8), ValidationError);
  auto shortened = held_out;
  shortened[0].history = num::Matrix(4, 2);
  CHECK_THROWS_AS(fm::fm_forecast(model, shortened, 2, 8), ValidationError);
}

TEST_CASE("FM training: initial loss matches the weighted and plain target norms") {
  auto ds = dyn::generate_dataset(dyn::system_by_name("lorenz"), 40, 1, 5);
  const auto cov = fm::BrownianCovariance::normalized(75);
  for (bool weighted : {true, false}) {
    fm::FmConfig cfg{.window = 5, .batch_size = 4000, .max_steps = 1, .arch = tiny_arch(), .weighted_loss = weighted};
    const double loss = fm::fm_train(ds, cfg).log[0].loss;
    const double expected = initial_loss_oracle(ds, cov, 0.1, weighted, 4000);
    CAPTURE(weighted);
    CHECK(loss == doctest::Approx(expected).epsilon(0.05));
  }
}

TEST_CASE("FM training: finite initial loss on every benchmark system and reproducible logs") {
  for (auto kind : dyn::all_systems()) {
    auto ds = dyn::generate_dataset(dyn::make_system(kind), 8, 1, 6);
    fm::FmConfig cfg{.window = 10, .batch_size = 8, .max_steps = 3, .seed = 4, .arch = tiny_arch(), .smoothing = 2};
    auto a = fm::fm_train(ds, cfg);
    auto b = fm::fm_train(ds, cfg);
    CAPTURE(ds.system);
    REQUIRE(a.log.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(std::isfinite(a.log[i].loss));
      CHECK(a.log[i].loss == b.log[i].loss);
    }
    CHECK(a.model.id() == b.model.id());
  }
}

TEST_CASE("FM training rejects bad configurations") {
  auto ds = dyn::generate_dataset(dyn::system_by_name("brusselator"), 4, 1, 2);
  CHECK_THROWS_AS(fm::fm_train(ds, {.window = 0}), ValidationError);
  CHECK_THROWS_AS(fm::fm_train(ds, {.window = 76}), ValidationError);
  CHECK_THROWS_AS(fm::fm_train(ds, {.batch_size = 0}), ValidationError);
  CHECK_THROWS_AS(fm::fm_train(ds, {.path = {.sigma_bridge = -0.1}}), ValidationError);
  CHECK_THROWS_AS(fm::fm_train(ds, {.sampler = {.n_steps = 0}}), ValidationError);
}

TEST_CASE("FM constant process: sample means sit on the held value") {
  auto ds = custom_dataset(64, 8, {.observe = 4, .predict = 10, .extrapolate = 0}, 2, 3, hold);
  fm::FmConfig cfg{.window = 2, .batch_size = 128, .max_steps = 2000, .seed = 1, .arch = tiny_arch()};
  auto model = fm::fm_train(ds, cfg).model;
  auto inputs = ar::test_inputs(ds, 10);
  auto out = fm::fm_forecast(model, inputs, 50, 3);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const num::Matrix mean = out[i].mean();
    for (std::size_t t = 0; t < 10; ++t) {
      for (std::size_t d = 0; d < 2; ++d) {
        const double err = (mean(t, d) - inputs[i].history(3, d)) / ds.normalization.stddev[d];
        CHECK(std::abs(err) < 0.1);
      }
    }
  }
}

TEST_CASE("FM windowed extrapolation re-conditions on the truth") {
  auto ds = custom_dataset(8, 3, {.observe = 4, .predict = 5, .extrapolate = 10}, 2, 9, hold);
  fm::FmConfig cfg{.window = 3, .batch_size = 8, .max_steps = 3, .arch = tiny_arch()};
  auto model = fm::fm_train(ds, cfg).model;
  auto out = fm::fm_forecast_windows(model, ds, 12, 4, 21);
  REQUIRE(out.size() == 3);

  std::vector<ar::ForecastInput> second;
  for (const auto& traj : ds.test) {
    ar::ForecastInput in;
    in.instance_id = traj.id;
    in.history = num::Matrix(9, 2);
    for (std::size_t t = 0; t < 9; ++t) {
      for (std::size_t d = 0; d < 2; ++d) in.history(t, d) = traj.states(t, d);
    }
    second.push_back(std::move(in));
  }
  auto direct = fm::fm_forecast(model, second, 4, num::derive_seed(21, 1));
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(out[i].horizon == 12);
    CHECK(out[i].start == 4);
    REQUIRE(out[i].samples.size() == 4);
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(out[i].samples[j].rows() == 12);
      for (std::size_t t = 0; t < 5; ++t) {
        for (std::size_t d = 0; d < 2; ++d) CHECK(out[i].samples[j](5 + t, d) == direct[i].samples[j](t, d));
      }
    }
  }
  CHECK_THROWS_AS(fm::fm_forecast_windows(model, ds, 30, 4, 21), ValidationError);
  CHECK_THROWS_AS(fm::fm_forecast_windows(model, ds, 0, 4, 21), ValidationError);
}

TEST_CASE("FM bundle round trip") {
  auto ds = dyn::generate_dataset(dyn::system_by_name("van_der_pol"), 4, 2, 3);
  fm::FmConfig cfg{.window = 4, .batch_size = 4, .max_steps = 2, .arch = tiny_arch(), .weighted_loss = false};
  auto model = fm::fm_train(ds, cfg).model;
  const auto dir = std::filesystem::temp_directory_path() / "afm_fm_bundle_test";
  std::filesystem::remove_all(dir);
  model.save(dir);
  auto loaded = fm::FmModel::load(dir);
  CHECK(loaded.id() == model.id());
  CHECK(!loaded.spec().weighted_loss);
  auto inputs = ar::test_inputs(ds, 75);
  auto a = fm::fm_forecast(model, inputs, 2, 5);
  auto b = fm::fm_forecast(loaded, inputs, 2, 5);
  CHECK(a[0].samples[1] == b[0].samples[1]);

  ar::AfmModel afm({.dim = 2, .window = 3, .normalization = ds.normalization});
  const auto other = std::filesystem::temp_directory_path() / "afm_fm_bundle_kind_test";
  std::filesystem::remove_all(other);
  afm.save(other);
  CHECK_THROWS_AS(fm::FmModel::load(other), ValidationError);
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(other);
}
