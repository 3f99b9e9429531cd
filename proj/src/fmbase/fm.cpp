#include "afm/fmbase/fm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <deque>

#include "afm/errors.hpp"
#include "afm/nets/bundle.hpp"
#include "afm/numcore/adam.hpp"
#include "afm/util/log.hpp"
#include "afm/util/parallel.hpp"
#include "afm/util/text.hpp"

namespace afm::fm {
namespace {

constexpr const char* kFormat = "afm-model";
constexpr std::size_t kChunkBudget = std::size_t{24} << 20;

nlohmann::json to_json(const FmArchitecture& a) {
  return {{"encoder_hidden", a.encoder_hidden}, {"encoder_layers", a.encoder_layers},
          {"context_dim", a.context_dim},       {"seq_hidden", a.seq_hidden},
          {"seq_layers", a.seq_layers},         {"embed_dim", a.embed_dim}};
}

FmArchitecture architecture_from_json(const nlohmann::json& j) {
  FmArchitecture a;
  a.encoder_hidden = j.at("encoder_hidden").get<std::size_t>();
  a.encoder_layers = j.at("encoder_layers").get<std::size_t>();
  a.context_dim = j.at("context_dim").get<std::size_t>();
  a.seq_hidden = j.at("seq_hidden").get<std::size_t>();
  a.seq_layers = j.at("seq_layers").get<std::size_t>();
  a.embed_dim = j.at("embed_dim").get<std::size_t>();
  return a;
}

nlohmann::json spec_json(const FmSpec& s) {
  return {{"format", kFormat},
          {"version", 1},
          {"model_kind", "fm"},
          {"dim", s.dim},
          {"covariate_dim", s.covariate_dim},
          {"window", s.window},
          {"horizon", s.horizon},
          {"architecture", to_json(s.arch)},
          {"path", {{"sigma_bridge", s.path.sigma_bridge}}},
          {"sampler", {{"method", flow::method_name(s.sampler.method)}, {"n_steps", s.sampler.n_steps}}},
          {"weighted_loss", s.weighted_loss},
          {"normalization", ar::to_json(s.normalization)},
          {"dataset_id", s.dataset_id}};
}

void validate_path(const BaselinePathConfig& cfg) {
  if (!(cfg.sigma_bridge >= 0.0) || !std::isfinite(cfg.sigma_bridge)) {
    throw ValidationError("sigma_bridge must be finite and non-negative");
  }
}

// (L^-1 kron I_n)^T acting on step-major rows, so ||r W||^2 = r^T (Sigma^-1 kron I_n) r.
num::Matrix whitening_weights(const BrownianCovariance& cov, std::size_t n) {
  const std::size_t f = cov.size();
  const num::Matrix& li = cov.inverse_cholesky();
  num::Matrix w(f * n, f * n);
  for (std::size_t k = 0; k < f; ++k) {
    for (std::size_t kp = 0; kp <= k; ++kp) {
      for (std::size_t d = 0; d < n; ++d) w(kp * n + d, k * n + d) = li(k, kp);
    }
  }
  return w;
}

// Standardized states and raw covariates for steps [begin, end).
void copy_steps(const dyn::ForecastDataset& ds, const dyn::Trajectory& traj, const num::Matrix& z, std::size_t begin,
                std::size_t end, std::span<double> out) {
  const std::size_t width = ds.dim + ds.covariate_dim;
  for (std::size_t t = begin; t < end; ++t) {
    for (std::size_t d = 0; d < ds.dim; ++d) out[(t - begin) * width + d] = z(t, d);
    for (std::size_t q = 0; q < ds.covariate_dim; ++q) out[(t - begin) * width + ds.dim + q] = traj.covariates(t, q);
  }
}

}  // namespace

num::Matrix bridge_sample(const num::Matrix& y0, const num::Matrix& y1, double s, const BrownianCovariance& cov,
                          const BaselinePathConfig& cfg, num::Rng& rng) {
  validate_path(cfg);
  if (!(s >= 0.0 && s <= 1.0)) throw ValidationError("flow step must lie in [0, 1]");
  if (!y0.same_shape(y1) || y0.rows() != cov.size()) {
    throw ValidationError("bridge endpoints " + y0.shape_string() + " and " + y1.shape_string() +
                          " do not match covariance size " + std::to_string(cov.size()));
  }
  num::Matrix out(y0.rows(), y0.cols());
  auto o = out.values();
  auto a = y0.values();
  auto b = y1.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = (1.0 - s) * a[i] + s * b[i];
  const double scale = cfg.sigma_bridge * std::sqrt(s * (1.0 - s));
  if (scale > 0.0) {
    const num::Matrix noise = cov.sample(y0.cols(), rng);
    auto e = noise.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += scale * e[i];
  }
  return out;
}

num::Matrix fm_velocity_target(const num::Matrix& y, const num::Matrix& y0, const num::Matrix& y1, double s,
                               const BrownianCovariance& cov, const BaselinePathConfig& cfg) {
  validate_path(cfg);
  if (!y.same_shape(y0) || !y.same_shape(y1) || y.rows() != cov.size()) {
    throw ValidationError("velocity target shapes do not match");
  }
  num::Matrix out(y.rows(), y.cols());
  auto o = out.values();
  auto a = y0.values();
  auto b = y1.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = b[i] - a[i];
  const double coef = cfg.sigma_bridge * cfg.sigma_bridge * (1.0 - 2.0 * s) / 2.0;
  if (coef != 0.0) {
    num::Matrix dev(y.rows(), y.cols());
    auto dv = dev.values();
    auto yv = y.values();
    for (std::size_t i = 0; i < dv.size(); ++i) dv[i] = yv[i] - ((1.0 - s) * a[i] + s * b[i]);
    const num::Matrix corr = cov.solve(dev);
    auto c = corr.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += coef * c[i];
  }
  return out;
}

void validate(const FmConfig& cfg) {
  if (cfg.window == 0) throw ValidationError("window must be at least 1");
  if (cfg.batch_size == 0) throw ValidationError("batch_size must be at least 1");
  if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr)) throw ValidationError("lr must be positive");
  if (cfg.max_steps == 0) throw ValidationError("max_steps must be at least 1");
  if (cfg.n_samples == 0) throw ValidationError("n_samples must be at least 1");
  if (cfg.smoothing == 0) throw ValidationError("smoothing must be at least 1");
  validate_path(cfg.path);
  flow::validate(cfg.sampler);
}

FmModel::FmModel(FmSpec spec, std::uint64_t init_seed)
    : spec_(std::move(spec)), cov_(BrownianCovariance::normalized(spec_.horizon)) {
  if (spec_.dim == 0 || spec_.window == 0 || spec_.horizon == 0) {
    throw ValidationError("FM model needs positive dimension, window and horizon");
  }
  if (spec_.normalization.mean.size() != spec_.dim || spec_.normalization.stddev.size() != spec_.dim) {
    throw ValidationError("normalization statistics do not match model dimension " + std::to_string(spec_.dim));
  }
  validate_path(spec_.path);
  flow::validate(spec_.sampler);
  const auto& a = spec_.arch;
  num::Rng rng(init_seed);
  encoder_ = nets::ContextEncoder(
      {.input_dim = step_width(), .hidden = a.encoder_hidden, .layers = a.encoder_layers, .out_dim = a.context_dim},
      params_, rng);
  forward_offset_ = nets::Linear(a.context_dim + a.embed_dim, 4 * a.seq_hidden, params_, rng, "condition.fwd");
  backward_offset_ = nets::Linear(a.context_dim + a.embed_dim, 4 * a.seq_hidden, params_, rng, "condition.bwd");
  sequence_ = nets::BiLstm(step_width(), a.seq_hidden, a.seq_layers, params_, rng, "sequence");
  output_ = nets::Linear(2 * a.seq_hidden, spec_.dim, params_, rng, "sequence.out", true);
  embedder_ = nets::FourierEmbedder(a.embed_dim);
}

num::Var FmModel::record_context(num::Tape& tape, num::Var history) const {
  return encoder_.record(tape, history, spec_.window);
}

num::Var FmModel::record_velocity(num::Tape& tape, num::Var context, num::Var state, num::Var covariates,
                                  num::Var embed) const {
  const std::size_t n = spec_.dim;
  const std::size_t c = spec_.covariate_dim;
  const std::size_t f = spec_.horizon;
  if (tape.cols(state) != f * n) {
    throw ValidationError("trajectory state has " + std::to_string(tape.cols(state)) + " columns, expected " +
                          std::to_string(f * n));
  }
  const num::Var cond_parts[2] = {context, embed};
  const num::Var cond = tape.concat_cols(cond_parts);
  const num::Var offsets[2] = {forward_offset_.record(tape, cond), backward_offset_.record(tape, cond)};
  std::vector<num::Var> steps(f);
  for (std::size_t k = 0; k < f; ++k) {
    const num::Var y = tape.slice_cols(state, k * n, n);
    if (c == 0) {
      steps[k] = y;
    } else {
      const num::Var parts[2] = {y, tape.slice_cols(covariates, k * c, c)};
      steps[k] = tape.concat_cols(parts);
    }
  }
  const auto states = sequence_.record(tape, steps, offsets);
  std::vector<num::Var> out(f);
  for (std::size_t k = 0; k < f; ++k) {
    const num::Var both[2] = {states.forward[k], states.backward[k]};
    out[k] = output_.record(tape, tape.concat_cols(both));
  }
  return tape.concat_cols(out);
}

num::Var FmModel::record(num::Tape& tape, num::Var history, num::Var state, num::Var covariates,
                         num::Var embed) const {
  return record_velocity(tape, record_context(tape, history), state, covariates, embed);
}

std::string FmModel::id() const {
  const std::vector<double> flat = params_.flatten();
  std::string bytes(flat.size() * sizeof(double), '\0');
  std::memcpy(bytes.data(), flat.data(), bytes.size());
  return util::hex64(util::fnv1a(bytes, util::fnv1a(spec_json(spec_).dump())));
}

void FmModel::save(const std::filesystem::path& dir) const {
  nlohmann::json manifest = spec_json(spec_);
  manifest["model_id"] = id();
  nets::write_bundle(dir, manifest, params_);
}

FmModel FmModel::load(const std::filesystem::path& dir) {
  const nlohmann::json m = nets::read_manifest(dir);
  try {
    if (m.at("format").get<std::string>() != kFormat) throw ValidationError("not a model bundle: " + dir.string());
    if (m.at("model_kind").get<std::string>() != "fm") {
      throw ValidationError("bundle " + dir.string() + " holds a '" + m.at("model_kind").get<std::string>() +
                            "' model, expected 'fm'");
    }
    FmSpec spec;
    spec.dim = m.at("dim").get<std::size_t>();
    spec.covariate_dim = m.at("covariate_dim").get<std::size_t>();
    spec.window = m.at("window").get<std::size_t>();
    spec.horizon = m.at("horizon").get<std::size_t>();
    spec.arch = architecture_from_json(m.at("architecture"));
    spec.path.sigma_bridge = m.at("path").at("sigma_bridge").get<double>();
    spec.sampler.method = flow::parse_method(m.at("sampler").at("method").get<std::string>());
    spec.sampler.n_steps = m.at("sampler").at("n_steps").get<std::size_t>();
    spec.weighted_loss = m.at("weighted_loss").get<bool>();
    spec.normalization = ar::normalization_from_json(m.at("normalization"));
    spec.dataset_id = m.value("dataset_id", std::string());
    FmModel model(std::move(spec));
    nets::read_parameters(dir, m, model.params_);
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed model manifest in " + dir.string() + ": " + e.what());
  }
}

FmTrainResult fm_train(const dyn::ForecastDataset& dataset, const FmConfig& cfg, const ar::TrainOptions& options) {
  validate(cfg);
  const dyn::Split& split = dataset.split;
  if (cfg.window > split.observe) {
    throw ValidationError("window " + std::to_string(cfg.window) + " exceeds the observation length " +
                          std::to_string(split.observe));
  }
  if (split.predict == 0 || split.observe + split.predict > dataset.steps) {
    throw ValidationError("dataset has no prediction segment to train on");
  }
  if (dataset.train.empty()) throw ValidationError("training partition is empty");
  FmSpec spec{.dim = dataset.dim,
              .covariate_dim = dataset.covariate_dim,
              .window = cfg.window,
              .horizon = split.predict,
              .arch = cfg.arch,
              .path = cfg.path,
              .sampler = cfg.sampler,
              .weighted_loss = cfg.weighted_loss,
              .normalization = dataset.normalization};
  FmTrainResult result{FmModel(spec, num::derive_seed(cfg.seed, ~std::uint64_t{0})), {}, 0, 0.0};
  FmModel& model = result.model;
  const std::size_t n = spec.dim;
  const std::size_t c = spec.covariate_dim;
  const std::size_t f = spec.horizon;
  const std::size_t w = spec.window;
  const std::size_t width = model.step_width();
  const auto& cov = model.covariance();

  std::vector<num::Matrix> normalized;
  for (const auto& traj : dataset.train) normalized.push_back(dataset.normalization.normalize(traj.states));

  num::Tape tape(&model.params());
  const std::size_t b = cfg.batch_size;
  const num::Var history = tape.input(b, w * width, "history");
  num::Var covariates;
  if (c > 0) covariates = tape.input(b, f * c, "covariates");
  const num::Var state = tape.input(b, f * n, "state");
  const num::Var embed = tape.input(b, spec.arch.embed_dim, "embed");
  const num::Var target = tape.input(b, f * n, "target");
  const num::Var velocity = model.record(tape, history, state, covariates, embed);
  num::Var residual = tape.sub(target, velocity);
  if (cfg.weighted_loss) residual = tape.matmul(residual, tape.constant(whitening_weights(cov, n)));
  tape.mean_sq_norm(residual);

  num::Matrix h_in(b, w * width), c_in(b, f * c), y_in(b, f * n), e_in(b, spec.arch.embed_dim), t_in(b, f * n);
  num::Matrix y1(f, n);
  auto adam = num::AdamState::for_params(model.params(), cfg.lr);
  std::deque<double> recent;
  double recent_sum = 0.0;
  double best = INFINITY;
  std::vector<double> best_params;
  const std::size_t smoothing = std::min(cfg.smoothing, cfg.max_steps);
  const auto started = std::chrono::steady_clock::now();

  for (std::size_t step = 0; step < cfg.max_steps; ++step) {
    const std::uint64_t batch_seed = num::derive_seed(cfg.seed, step);
    num::Rng rng(batch_seed);
    for (std::size_t r = 0; r < b; ++r) {
      const std::size_t k = rng.index(dataset.train.size());
      const auto& traj = dataset.train[k];
      const num::Matrix& z = normalized[k];
      copy_steps(dataset, traj, z, split.observe - w, split.observe, h_in.row(r));
      for (std::size_t t = 0; t < f; ++t) {
        for (std::size_t d = 0; d < n; ++d) y1(t, d) = z(split.observe + t, d);
        for (std::size_t q = 0; q < c; ++q) c_in(r, t * c + q) = traj.covariates(split.observe + t, q);
      }
      const double s = rng.uniform();
      const num::Matrix y0 = cov.sample(n, rng);
      const num::Matrix ys = bridge_sample(y0, y1, s, cov, cfg.path, rng);
      const num::Matrix tgt = fm_velocity_target(ys, y0, y1, s, cov, cfg.path);
      std::copy(ys.values().begin(), ys.values().end(), y_in.row(r).begin());
      std::copy(tgt.values().begin(), tgt.values().end(), t_in.row(r).begin());
      model.embedder().embed_into(s, e_in.row(r));
    }
    tape.set_input(history, h_in);
    if (covariates.valid()) tape.set_input(covariates, c_in);
    tape.set_input(state, y_in);
    tape.set_input(embed, e_in);
    tape.set_input(target, t_in);
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
    num::adam_step(adam, model.params(), tape.backward());
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

std::vector<ar::ForecastEnsemble> fm_forecast(const FmModel& model, std::span<const ar::ForecastInput> inputs,
                                              std::size_t samples, std::uint64_t seed) {
  if (samples == 0) throw ValidationError("forecast needs at least one sample path");
  const auto& spec = model.spec();
  const std::size_t n = spec.dim;
  const std::size_t c = spec.covariate_dim;
  const std::size_t f = spec.horizon;
  const std::size_t w = spec.window;
  const std::size_t width = model.step_width();
  for (const auto& in : inputs) {
    const std::string who = "instance " + std::to_string(in.instance_id);
    if (in.history.cols() != n) throw ValidationError(who + ": history dimension does not match the model");
    if (in.history.rows() < w) throw ValidationError(who + ": history is shorter than the window");
    if (!in.history.all_finite()) throw ValidationError(who + ": history contains non-finite values");
    if (c > 0 && (in.covariates.cols() != c || in.covariates.rows() < in.history.rows() + f)) {
      throw ValidationError(who + ": covariates must cover history and horizon");
    }
  }
  const std::size_t total = inputs.size() * samples;
  std::vector<num::Matrix> paths(total);
  std::vector<char> failed(total, 0);

  // Rows per chunk from the per-row tape footprint.
  std::size_t per_row = 0;
  {
    num::Tape probe(&model.params());
    const num::Var h = probe.input(1, w * width);
    const num::Var ctx = model.record_context(probe, h);
    num::Var cv;
    if (c > 0) cv = probe.input(1, f * c);
    model.record_velocity(probe, ctx, probe.input(1, f * n), cv, probe.input(1, spec.arch.embed_dim));
    for (std::uint32_t i = 0; i < probe.node_count(); ++i) per_row += probe.rows({i}) * probe.cols({i});
  }
  const std::size_t block = std::clamp<std::size_t>(kChunkBudget / std::max<std::size_t>(per_row, 1), 1, 4096);
  const std::size_t blocks = (total + block - 1) / block;

  util::parallel_for(blocks, [&](std::size_t chunk) {
    const std::size_t r0 = chunk * block;
    const std::size_t rows = std::min(block, total - r0);
    num::Tape ctx_tape(&model.params());
    const num::Var h = ctx_tape.input(rows, w * width, "history");
    model.record_context(ctx_tape, h);
    num::Tape vel_tape(&model.params());
    const num::Var ctx = vel_tape.input(rows, spec.arch.context_dim, "context");
    num::Var cv;
    if (c > 0) cv = vel_tape.input(rows, f * c, "covariates");
    const num::Var st = vel_tape.input(rows, f * n, "state");
    const num::Var em = vel_tape.input(rows, spec.arch.embed_dim, "embed");
    model.record_velocity(vel_tape, ctx, st, cv, em);

    num::Matrix h_in(rows, w * width), c_in(rows, f * c), y0(rows, f * n), e_in(rows, spec.arch.embed_dim);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t row = r0 + r;
      const auto& in = inputs[row / samples];
      const std::size_t l = in.history.rows();
      const num::Matrix z = spec.normalization.normalize(in.history);
      for (std::size_t j = 0; j < w; ++j) {
        for (std::size_t d = 0; d < n; ++d) h_in(r, j * width + d) = z(l - w + j, d);
        for (std::size_t q = 0; q < c; ++q) h_in(r, j * width + n + q) = in.covariates(l - w + j, q);
      }
      for (std::size_t t = 0; t < f; ++t) {
        for (std::size_t q = 0; q < c; ++q) c_in(r, t * c + q) = in.covariates(l + t, q);
      }
      num::Rng rng(num::derive_seed(num::derive_seed(seed, in.instance_id), row % samples));
      const num::Matrix base = model.covariance().sample(n, rng);
      std::copy(base.values().begin(), base.values().end(), y0.row(r).begin());
    }
    ctx_tape.set_input(h, h_in);
    vel_tape.set_input(ctx, ctx_tape.forward());
    if (c > 0) vel_tape.set_input(cv, c_in);
    auto field = [&](const num::Matrix& y, double s) {
      const auto e = model.embedder().embed(s);
      for (std::size_t r = 0; r < rows; ++r) std::copy(e.begin(), e.end(), e_in.row(r).begin());
      vel_tape.set_input(st, y);
      vel_tape.set_input(em, e_in);
      return vel_tape.forward();
    };
    std::vector<char> bad;
    const num::Matrix y1 = flow::ode_sample(field, std::move(y0), spec.sampler, &bad);
    for (std::size_t r = 0; r < rows; ++r) {
      failed[r0 + r] = bad[r];
      num::Matrix m(f, n);
      std::copy(y1.row(r).begin(), y1.row(r).end(), m.values().begin());
      paths[r0 + r] = std::move(m);
    }
  });

  std::vector<ar::ForecastEnsemble> out;
  const std::string model_id = model.id();
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    ar::ForecastEnsemble e;
    e.instance_id = inputs[i].instance_id;
    e.start = inputs[i].history.rows();
    e.horizon = f;
    e.dim = n;
    e.model_id = model_id;
    e.dataset_id = spec.dataset_id;
    e.seed = seed;
    for (std::size_t j = 0; j < samples; ++j) {
      const std::size_t row = i * samples + j;
      if (failed[row]) {
        ++e.failed;
        continue;
      }
      e.samples.push_back(spec.normalization.denormalize(paths[row]));
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

std::vector<ar::ForecastEnsemble> fm_forecast_windows(const FmModel& model, const dyn::ForecastDataset& dataset,
                                                      std::size_t horizon, std::size_t samples, std::uint64_t seed) {
  if (horizon == 0) throw ValidationError("forecast horizon must be at least 1");
  const std::size_t f = model.spec().horizon;
  const std::size_t l = dataset.split.observe;
  const std::size_t windows = (horizon + f - 1) / f;
  if (l + (windows - 1) * f > dataset.steps) {
    throw ValidationError("re-conditioned windows need ground truth through step " + std::to_string(l + (windows - 1) * f));
  }
  std::vector<std::vector<ar::ForecastEnsemble>> parts;
  for (std::size_t k = 0; k < windows; ++k) {
    const std::size_t end = l + k * f;
    std::vector<ar::ForecastInput> inputs;
    for (const auto& traj : dataset.test) {
      ar::ForecastInput in;
      in.instance_id = traj.id;
      in.history = num::Matrix(end, dataset.dim);
      for (std::size_t t = 0; t < end; ++t) {
        for (std::size_t d = 0; d < dataset.dim; ++d) in.history(t, d) = traj.states(t, d);
      }
      if (dataset.covariate_dim > 0) {
        if (traj.covariates.rows() < end + f) throw ValidationError("covariates do not cover the forecast windows");
        in.covariates = num::Matrix(end + f, dataset.covariate_dim);
        for (std::size_t t = 0; t < end + f; ++t) {
          for (std::size_t q = 0; q < dataset.covariate_dim; ++q) in.covariates(t, q) = traj.covariates(t, q);
        }
      }
      inputs.push_back(std::move(in));
    }
    parts.push_back(fm_forecast(model, inputs, samples, num::derive_seed(seed, k)));
  }
  std::vector<ar::ForecastEnsemble> out;
  for (std::size_t i = 0; i < dataset.test.size(); ++i) {
    ar::ForecastEnsemble e;
    const auto& first = parts[0][i];
    e.instance_id = first.instance_id;
    e.start = first.start;
    e.horizon = horizon;
    e.dim = first.dim;
    e.model_id = first.model_id;
    e.dataset_id = first.dataset_id;
    e.seed = seed;
    for (std::size_t j = 0; j < samples; ++j) {
      num::Matrix m(horizon, e.dim);
      bool kept = true;
      for (std::size_t k = 0; k < windows && kept; ++k) {
        const auto& part = parts[k][i];
        const auto it = std::find(part.sample_ids.begin(), part.sample_ids.end(), j);
        if (it == part.sample_ids.end()) {
          kept = false;
          break;
        }
        const num::Matrix& src = part.samples[static_cast<std::size_t>(it - part.sample_ids.begin())];
        for (std::size_t t = 0; t < f && k * f + t < horizon; ++t) {
          for (std::size_t d = 0; d < e.dim; ++d) m(k * f + t, d) = src(t, d);
        }
      }
      if (!kept) {
        ++e.failed;
        continue;
      }
      e.samples.push_back(std::move(m));
      e.sample_ids.push_back(j);
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace afm::fm
