#include "afm/ar/afm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>

#include "afm/errors.hpp"
#include "afm/numcore/adam.hpp"
#include "afm/numcore/tape.hpp"
#include "afm/util/log.hpp"
#include "afm/util/parallel.hpp"
#include "afm/util/text.hpp"

namespace afm::ar {
namespace {

// Upper bound on tape storage per forecast chunk, in doubles.
constexpr std::size_t kChunkBudget = std::size_t{24} << 20;

std::size_t tape_doubles(const num::Tape& tape) {
  std::size_t total = 0;
  for (std::uint32_t i = 0; i < tape.node_count(); ++i) total += tape.rows({i}) * tape.cols({i});
  return total;
}

// Tapes for one block of forecast rows.
struct InferenceGraph {
  explicit InferenceGraph(const AfmModel& model, std::size_t rows)
      : encoder_tape(&model.params()), velocity_tape(&model.params()) {
    const auto& s = model.spec();
    window = encoder_tape.input(rows, s.window * model.step_width(), "window");
    model.encoder().record(encoder_tape, window, s.window);
    state = velocity_tape.input(rows, s.dim, "state");
    context = velocity_tape.input(rows, s.arch.context_dim, "context");
    if (s.covariate_dim > 0) covariates = velocity_tape.input(rows, s.covariate_dim, "covariates");
    embed = velocity_tape.input(rows, s.arch.embed_dim, "embed");
    model.velocity().record(velocity_tape, state, context, covariates, embed);
  }

  num::Tape encoder_tape;
  num::Tape velocity_tape;
  num::Var window, state, context, covariates, embed;
};

std::size_t chunk_rows(const AfmModel& model) {
  InferenceGraph probe(model, 1);
  const std::size_t per_row = tape_doubles(probe.encoder_tape) + tape_doubles(probe.velocity_tape);
  return std::clamp<std::size_t>(kChunkBudget / std::max<std::size_t>(per_row, 1), 1, 4096);
}

void check_input(const AfmModel& model, const ForecastInput& in, std::size_t horizon) {
  const auto& s = model.spec();
  const std::string who = "instance " + std::to_string(in.instance_id);
  if (in.history.cols() != s.dim) {
    throw ValidationError(who + ": history has " + std::to_string(in.history.cols()) + " dimensions, model expects " +
                          std::to_string(s.dim));
  }
  if (in.history.rows() < s.window) {
    throw ValidationError(who + ": history length " + std::to_string(in.history.rows()) + " is shorter than window " +
                          std::to_string(s.window));
  }
  if (!in.history.all_finite()) throw ValidationError(who + ": history contains non-finite values");
  if (s.covariate_dim > 0 &&
      (in.covariates.cols() != s.covariate_dim || in.covariates.rows() < in.history.rows() + horizon)) {
    throw ValidationError(who + ": covariates must cover history and horizon with " +
                          std::to_string(s.covariate_dim) + " columns");
  }
}

}  // namespace

void validate(const AfmConfig& cfg) {
  if (cfg.window == 0) throw ValidationError("window must be at least 1");
  if (cfg.batch_size == 0) throw ValidationError("batch_size must be at least 1");
  if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr)) throw ValidationError("lr must be positive");
  if (cfg.max_steps == 0) throw ValidationError("max_steps must be at least 1");
  if (cfg.n_samples == 0) throw ValidationError("n_samples must be at least 1");
  if (cfg.smoothing == 0) throw ValidationError("smoothing must be at least 1");
  flow::validate(cfg.flow);
  flow::validate(cfg.sampler);
}

BatchSampler::BatchSampler(const dyn::ForecastDataset& dataset, std::size_t window,
                           const nets::FourierEmbedder& embedder, const flow::FlowPathConfig& flow)
    : dim_(dataset.dim),
      covariate_dim_(dataset.covariate_dim),
      window_(window),
      t_begin_(dataset.split.observe),
      t_end_(dataset.split.observe + dataset.split.predict),
      embedder_(&embedder),
      flow_(flow) {
  if (dataset.train.empty()) throw ValidationError("training partition is empty");
  if (t_end_ > dataset.steps) throw ValidationError("split exceeds trajectory length");
  if (std::max(t_begin_, window_) >= t_end_) {
    throw ValidationError("no training target has " + std::to_string(window_) + " steps of history");
  }
  const std::size_t width = dim_ + covariate_dim_;
  for (const auto& traj : dataset.train) {
    const num::Matrix z = dataset.normalization.normalize(traj.states);
    num::Matrix joined(z.rows(), width);
    for (std::size_t t = 0; t < z.rows(); ++t) {
      for (std::size_t d = 0; d < dim_; ++d) joined(t, d) = z(t, d);
      for (std::size_t c = 0; c < covariate_dim_; ++c) joined(t, dim_ + c) = traj.covariates(t, c);
    }
    series_.push_back(std::move(joined));
  }
}

void BatchSampler::sample(std::size_t batch, num::Rng& rng, TrainingBatch& out) const {
  const std::size_t width = dim_ + covariate_dim_;
  out.window.reset(batch, window_ * width);
  out.covariates.reset(batch, covariate_dim_);
  out.state.reset(batch, dim_);
  out.embed.reset(batch, embedder_->out_dim());
  out.target.reset(batch, dim_);
  out.flow_step.assign(batch, 0.0);
  out.series.assign(batch, 0);
  out.time.assign(batch, 0);
  out.window_provenance.assign(batch * window_, Provenance::kObserved);
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t k = 0;
    std::size_t t = 0;
    do {
      k = rng.index(series_.size());
      t = t_begin_ + rng.index(t_end_ - t_begin_);
    } while (t < window_);
    const num::Matrix& z = series_[k];
    std::copy_n(z.row(t - window_).data(), window_ * width, out.window.row(b).data());
    for (std::size_t c = 0; c < covariate_dim_; ++c) out.covariates(b, c) = z(t, dim_ + c);
    const double s = rng.uniform();
    for (std::size_t d = 0; d < dim_; ++d) {
      const double y0 = rng.normal();
      const double y1 = z(t, d);
      double ys = (1.0 - s) * y0 + s * y1;
      if (flow_.sigma_path > 0.0) ys += flow_.sigma_path * rng.normal();
      out.state(b, d) = ys;
      out.target(b, d) = y1 - y0;
    }
    embedder_->embed_into(s, out.embed.row(b));
    out.flow_step[b] = s;
    out.series[b] = k;
    out.time[b] = t;
  }
}

TrainResult train(const dyn::ForecastDataset& dataset, const AfmConfig& cfg, const TrainOptions& options) {
  validate(cfg);
  if (cfg.window > dataset.split.observe) {
    throw ValidationError("window " + std::to_string(cfg.window) + " exceeds the observation length " +
                          std::to_string(dataset.split.observe));
  }
  ModelSpec spec{.dim = dataset.dim,
                 .covariate_dim = dataset.covariate_dim,
                 .window = cfg.window,
                 .arch = cfg.arch,
                 .flow = cfg.flow,
                 .sampler = cfg.sampler,
                 .normalization = dataset.normalization};
  TrainResult result{AfmModel(spec, num::derive_seed(cfg.seed, ~std::uint64_t{0})), {}, 0, 0.0};
  AfmModel& model = result.model;
  const BatchSampler sampler(dataset, cfg.window, model.embedder(), cfg.flow);

  num::Tape tape(&model.params());
  const std::size_t b = cfg.batch_size;
  const num::Var window = tape.input(b, cfg.window * model.step_width(), "window");
  num::Var covariates;
  if (spec.covariate_dim > 0) covariates = tape.input(b, spec.covariate_dim, "covariates");
  const num::Var state = tape.input(b, spec.dim, "state");
  const num::Var embed = tape.input(b, spec.arch.embed_dim, "embed");
  const num::Var target = tape.input(b, spec.dim, "target");
  const num::Var context = model.encoder().record(tape, window, cfg.window);
  const num::Var velocity = model.velocity().record(tape, state, context, covariates, embed);
  tape.mean_sq_norm(tape.sub(target, velocity));

  auto adam = num::AdamState::for_params(model.params(), cfg.lr);
  TrainingBatch batch;
  std::deque<double> recent;
  double recent_sum = 0.0;
  double best = INFINITY;
  std::vector<double> best_params;
  const std::size_t smoothing = std::min(cfg.smoothing, cfg.max_steps);
  const auto started = std::chrono::steady_clock::now();

  for (std::size_t step = 0; step < cfg.max_steps; ++step) {
    const std::uint64_t batch_seed = num::derive_seed(cfg.seed, step);
    num::Rng rng(batch_seed);
    sampler.sample(b, rng, batch);
    for (Provenance p : batch.window_provenance) {
      if (p != Provenance::kObserved) throw NumericalError("training window holds generated values");
    }
    tape.set_input(window, batch.window);
    if (covariates.valid()) tape.set_input(covariates, batch.covariates);
    tape.set_input(state, batch.state);
    tape.set_input(embed, batch.embed);
    tape.set_input(target, batch.target);
    const double loss = tape.forward()(0, 0);
    if (!std::isfinite(loss)) {
      throw NumericalError("non-finite training loss at step " + std::to_string(step) + " (batch seed " +
                           std::to_string(batch_seed) + ")");
    }
    recent.push_back(loss);
    recent_sum += loss;
    if (recent.size() > smoothing) {
      recent_sum -= recent.front();
      recent.pop_front();
    }
    if (recent.size() == smoothing && recent_sum / smoothing < best) {
      best = recent_sum / smoothing;
      best_params = model.params().flatten();
      result.best_step = step;
    }
    const num::GradientSet grads = tape.backward();
    num::adam_step(adam, model.params(), grads);

    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.log.push_back({step, loss, elapsed});
    if (options.on_step) options.on_step(result.log.back());
    if (options.log_every > 0 && (step + 1) % options.log_every == 0) {
      util::log_info("step " + std::to_string(step + 1) + "/" + std::to_string(cfg.max_steps) + " loss " +
                     util::format_double(recent_sum / static_cast<double>(recent.size())));
    }
  }
  if (!best_params.empty()) model.params().assign(best_params);
  result.best_smoothed_loss = best;
  return result;
}

std::vector<ForecastEnsemble> forecast(const AfmModel& model, std::span<const ForecastInput> inputs,
                                       std::size_t horizon, std::size_t samples, std::uint64_t seed) {
  if (horizon == 0) throw ValidationError("forecast horizon must be at least 1");
  if (samples == 0) throw ValidationError("forecast needs at least one sample path");
  for (const auto& in : inputs) check_input(model, in, horizon);

  const auto& spec = model.spec();
  const std::size_t n = spec.dim;
  const std::size_t c = spec.covariate_dim;
  const std::size_t w = spec.window;
  const std::size_t width = model.step_width();
  const std::size_t total = inputs.size() * samples;

  // Standardized window seeds per instance.
  std::vector<num::Matrix> seeds;
  for (const auto& in : inputs) seeds.push_back(spec.normalization.normalize(in.history));

  // paths(row) holds the last w history steps followed by the generated ones.
  num::Matrix paths(total, (w + horizon) * n);
  std::vector<char> failed(total, 0);
  const std::size_t block = chunk_rows(model);
  const std::size_t blocks = (total + block - 1) / block;

  util::parallel_for(blocks, [&](std::size_t chunk) {
    const std::size_t r0 = chunk * block;
    const std::size_t rows = std::min(block, total - r0);
    InferenceGraph g(model, rows);
    std::vector<num::Rng> rngs;
    rngs.reserve(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t row = r0 + r;
      const auto& in = inputs[row / samples];
      rngs.emplace_back(num::derive_seed(num::derive_seed(seed, in.instance_id), row % samples));
      const num::Matrix& z = seeds[row / samples];
      for (std::size_t j = 0; j < w; ++j) {
        for (std::size_t d = 0; d < n; ++d) paths(row, j * n + d) = z(z.rows() - w + j, d);
      }
    }
    num::Matrix window(rows, w * width);
    num::Matrix step_covariates(rows, c);
    num::Matrix context;
    num::Matrix embed(rows, spec.arch.embed_dim);
    std::vector<char> step_failed;

    for (std::size_t k = 0; k < horizon; ++k) {
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t row = r0 + r;
        const auto& in = inputs[row / samples];
        const std::size_t l = in.history.rows();
        for (std::size_t j = 0; j < w; ++j) {
          for (std::size_t d = 0; d < n; ++d) window(r, j * width + d) = paths(row, (k + j) * n + d);
          for (std::size_t q = 0; q < c; ++q) window(r, j * width + n + q) = in.covariates(l - w + k + j, q);
        }
        for (std::size_t q = 0; q < c; ++q) step_covariates(r, q) = in.covariates(l + k, q);
      }
      g.encoder_tape.set_input(g.window, window);
      context = g.encoder_tape.forward();
      g.velocity_tape.set_input(g.context, context);
      if (c > 0) g.velocity_tape.set_input(g.covariates, step_covariates);

      num::Matrix y0(rows, n);
      for (std::size_t r = 0; r < rows; ++r) rngs[r].fill_normal(y0.row(r));
      auto field = [&](const num::Matrix& y, double s) {
        const auto e = model.embedder().embed(std::min(s, 1.0));
        for (std::size_t r = 0; r < rows; ++r) std::copy(e.begin(), e.end(), embed.row(r).begin());
        g.velocity_tape.set_input(g.state, y);
        g.velocity_tape.set_input(g.embed, embed);
        return g.velocity_tape.forward();
      };
      const num::Matrix y1 = flow::ode_sample(field, std::move(y0), spec.sampler, &step_failed);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t row = r0 + r;
        if (step_failed[r]) failed[row] = 1;
        for (std::size_t d = 0; d < n; ++d) paths(row, (w + k) * n + d) = failed[row] ? 0.0 : y1(r, d);
      }
    }
  });

  std::vector<ForecastEnsemble> out;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    ForecastEnsemble e;
    e.instance_id = inputs[i].instance_id;
    e.start = inputs[i].history.rows();
    e.horizon = horizon;
    e.dim = n;
    e.model_id = model.id();
    e.dataset_id = spec.dataset_id;
    e.seed = seed;
    for (std::size_t j = 0; j < samples; ++j) {
      const std::size_t row = i * samples + j;
      if (failed[row]) {
        ++e.failed;
        continue;
      }
      num::Matrix z(horizon, n);
      for (std::size_t k = 0; k < horizon; ++k) {
        for (std::size_t d = 0; d < n; ++d) z(k, d) = paths(row, (w + k) * n + d);
      }
      e.samples.push_back(spec.normalization.denormalize(z));
      e.sample_ids.push_back(j);
    }
    if (e.failed > 0) {
      util::log_warn("instance " + std::to_string(e.instance_id) + ": excluded " + std::to_string(e.failed) + " of " +
                     std::to_string(samples) + " sample paths with non-finite values");
    }
    out.push_back(std::move(e));
  }
  return out;
}

ForecastEnsemble forecast(const AfmModel& model, const num::Matrix& history, const num::Matrix& covariates,
                          std::size_t horizon, std::size_t samples, std::uint64_t seed) {
  const ForecastInput in{0, history, covariates};
  return std::move(forecast(model, std::span<const ForecastInput>(&in, 1), horizon, samples, seed).front());
}

std::vector<ForecastInput> test_inputs(const dyn::ForecastDataset& dataset, std::size_t horizon) {
  std::vector<ForecastInput> out;
  const std::size_t l = dataset.split.observe;
  for (const auto& traj : dataset.test) {
    ForecastInput in;
    in.instance_id = traj.id;
    in.history = num::Matrix(l, dataset.dim);
    for (std::size_t t = 0; t < l; ++t) {
      for (std::size_t d = 0; d < dataset.dim; ++d) in.history(t, d) = traj.states(t, d);
    }
    if (dataset.covariate_dim > 0) {
      if (traj.covariates.rows() < l + horizon) {
        throw ValidationError("trajectory " + std::to_string(traj.id) + " has no covariates for the full horizon");
      }
      in.covariates = num::Matrix(l + horizon, dataset.covariate_dim);
      for (std::size_t t = 0; t < l + horizon; ++t) {
        for (std::size_t q = 0; q < dataset.covariate_dim; ++q) in.covariates(t, q) = traj.covariates(t, q);
      }
    }
    out.push_back(std::move(in));
  }
  return out;
}

}  // namespace afm::ar
