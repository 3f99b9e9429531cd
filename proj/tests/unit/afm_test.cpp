#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "afm/ar/afm.hpp"
#include "afm/util/text.hpp"
#include "test_datasets.hpp"

using namespace afm;

using afm::testing::custom_dataset;
using afm::testing::hold;

namespace {

ar::Architecture tiny_arch() {
  return {.encoder_hidden = 8, .encoder_layers = 1, .context_dim = 8, .mlp_hidden = 32, .mlp_depth = 2, .embed_dim = 8};
}

dyn::ForecastDataset brusselator_dataset() {
  return dyn::generate_dataset(dyn::system_by_name("brusselator"), 6, 2, 11);
}

}  // namespace

TEST_CASE("quantile examples") {
  ar::ForecastEnsemble e;
  e.horizon = 1;
  e.dim = 1;
  for (double v : {3.0, 1.0, 5.0, 2.0, 4.0}) e.samples.push_back(num::Matrix(1, 1, v));
  const double median[] = {0.5};
  CHECK(ar::quantiles(e, median).values[0](0, 0) == 3.0);

  ar::ForecastEnsemble same = e;
  for (auto& s : same.samples) s(0, 0) = 7.25;
  const double levels[] = {0.05, 0.3, 0.5, 0.99};
  for (const auto& m : ar::quantiles(same, levels).values) CHECK(m(0, 0) == 7.25);

  ar::ForecastEnsemble one = e;
  one.samples.resize(1);
  CHECK_THROWS_AS(ar::quantiles(one, median), ValidationError);
  const double unsorted[] = {0.5, 0.2};
  CHECK_THROWS_AS(ar::quantiles(e, unsorted), ValidationError);
  const double outside[] = {0.0};
  CHECK_THROWS_AS(ar::quantiles(e, outside), ValidationError);
}

TEST_CASE("gaussian quantiles and monotonicity") {
  num::Rng rng(4);
  ar::ForecastEnsemble e;
  e.horizon = 3;
  e.dim = 2;
  for (int i = 0; i < 10000; ++i) {
    num::Matrix m(3, 2);
    rng.fill_normal(m.values());
    e.samples.push_back(m);
  }
  const double tails[] = {0.05, 0.95};
  auto q = ar::quantiles(e, tails);
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t d = 0; d < 2; ++d) {
      CHECK(std::abs(q.values[0](t, d) + 1.645) < 0.07);
      CHECK(std::abs(q.values[1](t, d) - 1.645) < 0.07);
    }
  }
  const double many[] = {0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99};
  auto table = ar::quantiles(e, many);
  for (std::size_t k = 1; k < 7; ++k) {
    for (std::size_t i = 0; i < 6; ++i) CHECK(table.values[k].values()[i] >= table.values[k - 1].values()[i]);
  }
}

TEST_CASE("batches are teacher forced from the prediction segment") {
  auto ds = brusselator_dataset();
  nets::FourierEmbedder embed(8);
  const std::size_t w = 5;
  ar::BatchSampler sampler(ds, w, embed, {.sigma_path = 0.0});
  num::Rng rng(0);
  ar::TrainingBatch batch;
  sampler.sample(64, rng, batch);
  CHECK(std::all_of(batch.window_provenance.begin(), batch.window_provenance.end(),
                    [](ar::Provenance p) { return p == ar::Provenance::kObserved; }));
  for (std::size_t b = 0; b < 64; ++b) {
    const std::size_t t = batch.time[b];
    CHECK(t >= ds.split.observe);
    CHECK(t < ds.split.observe + ds.split.predict);
    const num::Matrix z = ds.normalization.normalize(ds.train[batch.series[b]].states);
    for (std::size_t j = 0; j < w; ++j) {
      for (std::size_t d = 0; d < 2; ++d) CHECK(batch.window(b, j * 2 + d) == z(t - w + j, d));
    }
    const double s = batch.flow_step[b];
    for (std::size_t d = 0; d < 2; ++d) {
      const double y1 = z(t, d);
      const double y0 = y1 - batch.target(b, d);
      CHECK(batch.state(b, d) == doctest::Approx((1.0 - s) * y0 + s * y1).epsilon(1e-12));
    }
  }
}

TEST_CASE("initial loss equals the mean squared straight-path target") {
  auto ds = dyn::generate_dataset(dyn::system_by_name("lorenz"), 40, 1, 5);
  // Monte Carlo oracle of E||y1 - y0||^2 = n + E||y1||^2 over uniform targets.
  num::Rng rng(8);
  double acc = 0.0;
  const int draws = 10000;
  std::vector<num::Matrix> z;
  for (const auto& t : ds.train) z.push_back(ds.normalization.normalize(t.states));
  for (int i = 0; i < draws; ++i) {
    const auto& m = z[rng.index(z.size())];
    const std::size_t t = 75 + rng.index(75);
    for (std::size_t d = 0; d < 3; ++d) {
      const double diff = m(t, d) - rng.normal();
      acc += diff * diff;
    }
  }
  const double expected = acc / draws;
  ar::AfmConfig cfg{.window = 4, .batch_size = 10000, .max_steps = 1, .arch = tiny_arch()};
  auto result = ar::train(ds, cfg);
  CHECK(std::abs(result.log[0].loss - expected) < 0.1 * expected);
}

TEST_CASE("training rejects bad configurations before any step") {
  auto ds = brusselator_dataset();
  CHECK_THROWS_AS(ar::train(ds, {.window = 0}), ValidationError);
  CHECK_THROWS_AS(ar::train(ds, {.window = 76}), ValidationError);
  CHECK_THROWS_AS(ar::train(ds, {.batch_size = 0}), ValidationError);
  CHECK_THROWS_AS(ar::train(ds, {.lr = -1.0}), ValidationError);
}

TEST_CASE("training log and reproducibility") {
  auto ds = brusselator_dataset();
  ar::AfmConfig cfg{.window = 3, .batch_size = 16, .max_steps = 10, .seed = 2, .arch = tiny_arch(), .smoothing = 3};
  auto a = ar::train(ds, cfg);
  auto b = ar::train(ds, cfg);
  REQUIRE(a.log.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(a.log[i].step == i);
    CHECK(std::isfinite(a.log[i].loss));
    CHECK(a.log[i].loss == b.log[i].loss);
  }
  CHECK(a.model.params().flatten() == b.model.params().flatten());
  CHECK(a.best_step >= 2);
}

TEST_CASE("constant process: learned one-step and rolling forecasts stay put") {
  auto ds = custom_dataset(64, 8, {.observe = 4, .predict = 20, .extrapolate = 0}, 2, 3, hold);
  ar::AfmConfig cfg{.window = 2,
                    .batch_size = 128,
                    .max_steps = 4000,
                    .seed = 1,
                    .flow = {.sigma_path = 1e-4},
                    .sampler = {.n_steps = 16},
                    .arch = tiny_arch()};
  auto result = ar::train(ds, cfg);
  const auto& model = result.model;
  const auto& norm = ds.normalization;

  auto inputs = ar::test_inputs(ds, 1);
  auto one_step = ar::forecast(model, inputs, 1, 50, 9);
  double err = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (const auto& s : one_step[i].samples) {
      double sq = 0.0;
      for (std::size_t d = 0; d < 2; ++d) {
        const double diff = (s(0, d) - inputs[i].history(3, d)) / norm.stddev[d];
        sq += diff * diff;
      }
      err += std::sqrt(sq);
      ++count;
    }
  }
  CHECK(err / count < 0.05);

  auto rolled = ar::forecast(model, inputs, 20, 20, 10);
  std::vector<double> increments;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (const auto& s : rolled[i].samples) {
      for (std::size_t k = 0; k < 20; ++k) {
        double sq = 0.0;
        for (std::size_t d = 0; d < 2; ++d) {
          const double prev = k == 0 ? inputs[i].history(3, d) : s(k - 1, d);
          const double diff = (s(k, d) - prev) / norm.stddev[d];
          sq += diff * diff;
        }
        increments.push_back(std::sqrt(sq));
      }
    }
  }
  std::sort(increments.begin(), increments.end());
  CHECK(increments[increments.size() * 95 / 100] < 0.1);
}

TEST_CASE("forecast determinism, Markov window and errors") {
  auto ds = brusselator_dataset();
  ar::AfmConfig cfg{.window = 4, .batch_size = 8, .max_steps = 5, .arch = tiny_arch()};
  auto model = ar::train(ds, cfg).model;
  auto inputs = ar::test_inputs(ds, 6);

  auto a = ar::forecast(model, inputs[0].history, {}, 1, 1, 42);
  auto b = ar::forecast(model, inputs[0].history, {}, 1, 1, 42);
  CHECK(a.samples[0] == b.samples[0]);

  // Older history outside the window must not matter.
  num::Matrix padded(inputs[0].history.rows() + 10, 2, 1e3);
  for (std::size_t t = 0; t < inputs[0].history.rows(); ++t) {
    for (std::size_t d = 0; d < 2; ++d) padded(10 + t, d) = inputs[0].history(t, d);
  }
  auto c = ar::forecast(model, inputs[0].history, {}, 6, 3, 5);
  auto p = ar::forecast(model, padded, {}, 6, 3, 5);
  for (std::size_t k = 0; k < 3; ++k) CHECK(c.samples[k] == p.samples[k]);
  CHECK(p.start == c.start + 10);

  // Batched forecasts match per-instance forecasts; GEMM kernels may round
  // differently by row position, so only bitwise run-to-run equality holds.
  auto all = ar::forecast(model, inputs, 6, 3, 5);
  auto single = ar::forecast(model, std::span<const ar::ForecastInput>(&inputs[1], 1), 6, 3, 5);
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t i = 0; i < 12; ++i) {
      CHECK(all[1].samples[k].values()[i] == doctest::Approx(single[0].samples[k].values()[i]).epsilon(1e-9));
    }
  }
  CHECK(all[1].instance_id == inputs[1].instance_id);

  CHECK_THROWS_AS(ar::forecast(model, num::Matrix(3, 2), {}, 1, 1, 0), ValidationError);
  CHECK_THROWS_AS(ar::forecast(model, inputs[0].history, {}, 0, 1, 0), ValidationError);
  num::Matrix bad = inputs[0].history;
  bad(10, 0) = std::nan("");
  CHECK_THROWS_AS(ar::forecast(model, bad, {}, 1, 1, 0), ValidationError);
}

TEST_CASE("non-finite paths are flagged and excluded") {
  auto ds = brusselator_dataset();
  ar::AfmModel model({.dim = 2, .window = 3, .arch = tiny_arch(), .normalization = ds.normalization}, 0);
  auto& out_bias = model.params()[model.params().size() - 1].value;
  out_bias(0, 0) = INFINITY;
  auto e = ar::forecast(model, ar::test_inputs(ds, 2)[0].history, {}, 2, 4, 0);
  CHECK(e.failed == 4);
  CHECK(e.samples.empty());
}

TEST_CASE("model bundle and forecast CSV round trip") {
  auto ds = brusselator_dataset();
  ar::AfmConfig cfg{.window = 4, .batch_size = 8, .max_steps = 3, .arch = tiny_arch()};
  auto model = ar::train(ds, cfg).model;
  const auto dir = std::filesystem::temp_directory_path() / "afm_ar_bundle_test";
  std::filesystem::remove_all(dir);
  model.save(dir);
  auto loaded = ar::AfmModel::load(dir);
  CHECK(loaded.id() == model.id());
  auto inputs = ar::test_inputs(ds, 5);
  auto a = ar::forecast(model, inputs, 5, 3, 1);
  auto b = ar::forecast(loaded, inputs, 5, 3, 1);
  CHECK(a[0].samples == b[0].samples);

  ar::write_forecast_csv(dir / "forecast.csv", a);
  const auto text = util::read_file(dir / "forecast.csv");
  CHECK(text.rfind("instance_id,sample_id,t,dim,value\n", 0) == 0);
  auto back = ar::read_forecast_csv(dir / "forecast.csv");
  REQUIRE(back.size() == a.size());
  CHECK(back[1].start == 75);
  CHECK(back[1].samples == a[1].samples);
  const double levels[] = {0.1, 0.5, 0.9};
  ar::write_quantiles_csv(dir / "quantiles.csv", a, levels);
  CHECK(util::read_file(dir / "quantiles.csv").rfind("instance_id,t,dim,level,value\n", 0) == 0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("smoothed training loss falls on every benchmark system") {
  for (const auto kind : dyn::all_systems()) {
    const auto system = dyn::make_system(kind);
    CAPTURE(system.name);
    const auto ds = dyn::generate_dataset(system, 12, 2, 4);
    ar::AfmConfig cfg{.window = 3, .batch_size = 32, .lr = 3e-3, .max_steps = 300, .seed = 1, .arch = tiny_arch()};
    const auto result = ar::train(ds, cfg);
    REQUIRE(result.log.size() == 300);
    auto mean_loss = [&](std::size_t from, std::size_t to) {
      double s = 0.0;
      for (std::size_t i = from; i < to; ++i) s += result.log[i].loss;
      return s / static_cast<double>(to - from);
    };
    const double early = mean_loss(0, 30), late = mean_loss(270, 300);
    CHECK_MESSAGE(late < 0.9 * early, "early " << early << " late " << late);
    CHECK(result.best_smoothed_loss < early);
  }
}
