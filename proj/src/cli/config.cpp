#include "afm/cli/config.hpp"

#include <algorithm>
#include <initializer_list>

#include "afm/dynsys/system.hpp"
#include "afm/errors.hpp"
#include "afm/util/text.hpp"

namespace afm::cli {
namespace {

using nlohmann::json;

void check_keys(const json& obj, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!obj.is_object()) throw ValidationError("config: '" + where + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ValidationError("config: unknown key '" + (where.empty() ? key : where + "." + key) + "'");
    }
  }
}

template <class T>
void read(const json& obj, const char* key, T& dst, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    dst = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError("config: '" + where + key + "' has the wrong type");
  }
}

void read_count(const json& obj, const char* key, std::size_t& dst, const std::string& where) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
    throw ValidationError("config: '" + where + key + "' must be a non-negative integer");
  }
  dst = v.get<std::size_t>();
}

void read_sampler(const json& obj, flow::OdeSamplerConfig& s, const std::string& where) {
  std::string method(flow::method_name(s.method));
  read(obj, "ode_method", method, where);
  s.method = flow::parse_method(method);
  read_count(obj, "ode_steps", s.n_steps, where);
}

void apply_afm(const json& obj, ar::AfmConfig& c) {
  check_keys(obj,
             {"window", "batch_size", "lr", "max_steps", "smoothing", "sigma_path", "ode_method", "ode_steps",
              "encoder_hidden", "encoder_layers", "context_dim", "mlp_hidden", "mlp_depth", "embed_dim"},
             "afm");
  const std::string w = "afm.";
  read_count(obj, "window", c.window, w);
  read_count(obj, "batch_size", c.batch_size, w);
  read(obj, "lr", c.lr, w);
  read_count(obj, "max_steps", c.max_steps, w);
  read_count(obj, "smoothing", c.smoothing, w);
  read(obj, "sigma_path", c.flow.sigma_path, w);
  read_sampler(obj, c.sampler, w);
  read_count(obj, "encoder_hidden", c.arch.encoder_hidden, w);
  read_count(obj, "encoder_layers", c.arch.encoder_layers, w);
  read_count(obj, "context_dim", c.arch.context_dim, w);
  read_count(obj, "mlp_hidden", c.arch.mlp_hidden, w);
  read_count(obj, "mlp_depth", c.arch.mlp_depth, w);
  read_count(obj, "embed_dim", c.arch.embed_dim, w);
}

void apply_fm(const json& obj, fm::FmConfig& c) {
  check_keys(obj,
             {"window", "batch_size", "lr", "max_steps", "smoothing", "sigma_bridge", "weighted_loss", "ode_method",
              "ode_steps", "encoder_hidden", "encoder_layers", "context_dim", "seq_hidden", "seq_layers", "embed_dim"},
             "fm");
  const std::string w = "fm.";
  read_count(obj, "window", c.window, w);
  read_count(obj, "batch_size", c.batch_size, w);
  read(obj, "lr", c.lr, w);
  read_count(obj, "max_steps", c.max_steps, w);
  read_count(obj, "smoothing", c.smoothing, w);
  read(obj, "sigma_bridge", c.path.sigma_bridge, w);
  read(obj, "weighted_loss", c.weighted_loss, w);
  read_sampler(obj, c.sampler, w);
  read_count(obj, "encoder_hidden", c.arch.encoder_hidden, w);
  read_count(obj, "encoder_layers", c.arch.encoder_layers, w);
  read_count(obj, "context_dim", c.arch.context_dim, w);
  read_count(obj, "seq_hidden", c.arch.seq_hidden, w);
  read_count(obj, "seq_layers", c.arch.seq_layers, w);
  read_count(obj, "embed_dim", c.arch.embed_dim, w);
}

void check_arch_positive(std::initializer_list<std::pair<const char*, std::size_t>> sizes, const std::string& where) {
  for (const auto& [name, v] : sizes) {
    if (v == 0) throw ValidationError("config: '" + where + name + "' must be at least 1");
  }
}

}  // namespace

Scale parse_scale(std::string_view name) {
  if (name == "smoke") return Scale::kSmoke;
  if (name == "desk") return Scale::kDesk;
  if (name == "full") return Scale::kFull;
  throw ValidationError("unknown scale '" + std::string(name) + "' (expected smoke, desk or full)");
}

std::string_view scale_name(Scale s) {
  switch (s) {
    case Scale::kSmoke: return "smoke";
    case Scale::kDesk: return "desk";
    case Scale::kFull: return "full";
  }
  return "full";
}

ExperimentConfig preset(Scale scale) {
  ExperimentConfig c;
  switch (scale) {
    case Scale::kFull:
      break;
    case Scale::kDesk:
      // Sized so two systems x three seeds of both models fit a single-core
      // budget of well under an hour.
      c.n_train = 400;
      c.n_test = 80;
      c.samples = 50;
      c.afm.max_steps = 5000;
      c.afm.window = 10;
      c.afm.arch = {.encoder_hidden = 32, .encoder_layers = 1, .context_dim = 32, .mlp_hidden = 64, .mlp_depth = 3,
                    .embed_dim = 16};
      c.fm.max_steps = 5000;
      c.fm.window = 10;
      c.fm.arch = {.encoder_hidden = 32, .encoder_layers = 1, .context_dim = 32, .seq_hidden = 16, .seq_layers = 1,
                   .embed_dim = 16};
      break;
    case Scale::kSmoke:
      c.n_train = 16;
      c.n_test = 4;
      c.samples = 4;
      c.afm.max_steps = 20;
      c.afm.batch_size = 16;
      c.afm.window = 5;
      c.afm.smoothing = 5;
      c.afm.arch = {.encoder_hidden = 8, .encoder_layers = 1, .context_dim = 8, .mlp_hidden = 16, .mlp_depth = 2,
                    .embed_dim = 8};
      c.fm.max_steps = 20;
      c.fm.batch_size = 16;
      c.fm.window = 5;
      c.fm.smoothing = 5;
      c.fm.arch = {.encoder_hidden = 8, .encoder_layers = 1, .context_dim = 8, .seq_hidden = 8, .seq_layers = 1,
                   .embed_dim = 8};
      break;
  }
  return c;
}

ExperimentConfig apply_json(const json& doc, ExperimentConfig c) {
  check_keys(doc, {"system", "dataset", "model_kind", "out", "seeds", "data", "forecast", "afm", "fm"}, "");
  read(doc, "system", c.system, "");
  if (doc.contains("system")) c.system_set = true;
  read(doc, "dataset", c.dataset, "");
  read(doc, "model_kind", c.model_kind, "");
  read(doc, "out", c.out, "");
  if (doc.contains("seeds")) {
    const json& s = doc.at("seeds");
    if (!s.is_array()) throw ValidationError("config: 'seeds' must be an array of non-negative integers");
    c.seeds.clear();
    for (const json& v : s) {
      if (!v.is_number_unsigned()) throw ValidationError("config: 'seeds' must be an array of non-negative integers");
      c.seeds.push_back(v.get<std::uint64_t>());
    }
  }
  if (doc.contains("data")) {
    const json& d = doc.at("data");
    check_keys(d, {"train", "test", "seed"}, "data");
    read_count(d, "train", c.n_train, "data.");
    read_count(d, "test", c.n_test, "data.");
    read(d, "seed", c.data_seed, "data.");
  }
  if (doc.contains("forecast")) {
    const json& f = doc.at("forecast");
    check_keys(f, {"samples", "horizon"}, "forecast");
    read_count(f, "samples", c.samples, "forecast.");
    if (f.contains("horizon")) {
      std::size_t h = 0;
      read_count(f, "horizon", h, "forecast.");
      c.horizon = h;
    }
  }
  if (doc.contains("afm")) apply_afm(doc.at("afm"), c.afm);
  if (doc.contains("fm")) apply_fm(doc.at("fm"), c.fm);
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
  json doc;
  try {
    doc = json::parse(util::read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  return apply_json(doc, std::move(base));
}

json to_json(const ExperimentConfig& c) {
  const auto& a = c.afm;
  const auto& f = c.fm;
  json doc = {
      {"system", c.system},
      {"dataset", c.dataset},
      {"model_kind", c.model_kind},
      {"out", c.out},
      {"seeds", c.seeds},
      {"data", {{"train", c.n_train}, {"test", c.n_test}, {"seed", c.data_seed}}},
      {"forecast", {{"samples", c.samples}}},
      {"afm",
       {{"window", a.window}, {"batch_size", a.batch_size}, {"lr", a.lr}, {"max_steps", a.max_steps},
        {"smoothing", a.smoothing}, {"sigma_path", a.flow.sigma_path},
        {"ode_method", flow::method_name(a.sampler.method)}, {"ode_steps", a.sampler.n_steps},
        {"encoder_hidden", a.arch.encoder_hidden}, {"encoder_layers", a.arch.encoder_layers},
        {"context_dim", a.arch.context_dim}, {"mlp_hidden", a.arch.mlp_hidden}, {"mlp_depth", a.arch.mlp_depth},
        {"embed_dim", a.arch.embed_dim}}},
      {"fm",
       {{"window", f.window}, {"batch_size", f.batch_size}, {"lr", f.lr}, {"max_steps", f.max_steps},
        {"smoothing", f.smoothing}, {"sigma_bridge", f.path.sigma_bridge}, {"weighted_loss", f.weighted_loss},
        {"ode_method", flow::method_name(f.sampler.method)}, {"ode_steps", f.sampler.n_steps},
        {"encoder_hidden", f.arch.encoder_hidden}, {"encoder_layers", f.arch.encoder_layers},
        {"context_dim", f.arch.context_dim}, {"seq_hidden", f.arch.seq_hidden}, {"seq_layers", f.arch.seq_layers},
        {"embed_dim", f.arch.embed_dim}}}};
  if (c.horizon) doc["forecast"]["horizon"] = *c.horizon;
  return doc;
}

void validate(const ExperimentConfig& c) {
  if (c.dataset.empty()) dyn::system_by_name(c.system);
  if (c.model_kind != "afm" && c.model_kind != "fm") {
    throw ValidationError("config: model_kind must be 'afm' or 'fm', got '" + c.model_kind + "'");
  }
  if (c.seeds.empty()) throw ValidationError("config: 'seeds' must not be empty");
  if (c.n_train == 0 || c.n_test == 0) throw ValidationError("config: data.train and data.test must be at least 1");
  if (c.samples < 2) throw ValidationError("config: forecast.samples must be at least 2");
  if (c.horizon && *c.horizon == 0) throw ValidationError("config: forecast.horizon must be at least 1");
  ar::validate(c.afm);
  fm::validate(c.fm);
  const auto& a = c.afm.arch;
  check_arch_positive({{"encoder_hidden", a.encoder_hidden},
                       {"encoder_layers", a.encoder_layers},
                       {"context_dim", a.context_dim},
                       {"mlp_hidden", a.mlp_hidden},
                       {"mlp_depth", a.mlp_depth},
                       {"embed_dim", a.embed_dim}},
                      "afm.");
  const auto& b = c.fm.arch;
  check_arch_positive({{"encoder_hidden", b.encoder_hidden},
                       {"encoder_layers", b.encoder_layers},
                       {"context_dim", b.context_dim},
                       {"seq_hidden", b.seq_hidden},
                       {"seq_layers", b.seq_layers},
                       {"embed_dim", b.embed_dim}},
                      "fm.");
  if (a.embed_dim % 2 != 0 || b.embed_dim % 2 != 0) throw ValidationError("config: embed_dim must be even");
}

}  // namespace afm::cli
