// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "nvf/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace nvf {

using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::string& section, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError(section + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) throw ConfigError(section + ": unknown key '" + key + "'");
  }
}

template <class T>
void read(const json& obj, const std::string& section, const char* key, T& out) {
  if (!obj.contains(key)) return;
  const auto& v = obj.at(key);
  try {
    if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError("");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("");
    }
    out = v.get<T>();
  } catch (const std::exception&) {
    throw ConfigError(section + "." + key + ": invalid value " + v.dump());
  }
}

void apply_data_defaults(DataConfig& d) {
  if (d.source == "gmm1d") {
    d.mu = 2.0;
    d.sigma = 0.1;
  } else if (d.source == "gmm2d") {
    d.components = 8;
    d.radius = 4.0;
    d.sigma = 0.5;
  } else if (d.source == "clusters") {
    d.n = 5000;
    d.components = 8;
    d.radius = 3.0;
    d.sigma = 0.5;
  } else if (d.source == "gmm_pairs") {
    d.n = 5000;
    d.components = 2;
    d.radius = 2.0;
    d.sigma = 0.5;
  }
}

bool tabular(const std::string& source) { return source == "csv"; }

}  // namespace

RunConfig config_from_json(const json& doc) {
  check_keys(doc, "config", {"data", "model", "train", "eval"});
  RunConfig cfg;
  const json empty = json::object();

  const json& d = doc.contains("data") ? doc.at("data") : empty;
  check_keys(d, "data",
             {"source", "n", "dim", "noise", "mu", "sigma", "components", "radius", "pairs", "path", "fractions", "seed"});
  read(d, "data", "source", cfg.data.source);
  static const std::set<std::string> sources{"gmm1d", "gmm2d", "two_moons", "gmm_pairs", "clusters", "csv"};
  if (!sources.count(cfg.data.source)) throw ConfigError("data.source: unknown source '" + cfg.data.source + "'");
  apply_data_defaults(cfg.data);
  read(d, "data", "n", cfg.data.n);
  read(d, "data", "dim", cfg.data.dim);
  read(d, "data", "noise", cfg.data.noise);
  read(d, "data", "mu", cfg.data.mu);
  read(d, "data", "sigma", cfg.data.sigma);
  read(d, "data", "components", cfg.data.components);
  read(d, "data", "radius", cfg.data.radius);
  read(d, "data", "pairs", cfg.data.pairs);
  read(d, "data", "path", cfg.data.path);
  read(d, "data", "seed", cfg.data.seed);
  if (d.contains("fractions")) {
    const auto& f = d.at("fractions");
    if (!f.is_array() || f.size() != 3) throw ConfigError("data.fractions: expected three numbers");
    for (std::size_t i = 0; i < 3; ++i) {
      if (!f[i].is_number()) throw ConfigError("data.fractions: expected three numbers");
      cfg.data.fractions[i] = f[i].get<double>();
    }
  }
  if (cfg.data.source == "csv" && cfg.data.path.empty()) throw ConfigError("data.path: required for csv source");

  const json& m = doc.contains("model") ? doc.at("model") : empty;
  check_keys(m, "model",
             {"latent", "states", "latent_dim", "length", "code_dim", "flow_depth", "flow_width", "flow_hidden_layers",
              "encoder_width", "encoder_hidden_layers"});
  std::string kind = "discrete";
  read(m, "model", "latent", kind);
  latent::LatentSpec spec;
  try {
    spec.kind = latent::latent_kind_from_string(kind);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("model.latent: ") + e.what());
  }
  switch (spec.kind) {
    case latent::LatentKind::None: break;
    case latent::LatentKind::Discrete: spec.states = 8; break;
    case latent::LatentKind::Continuous: spec.latent_dim = 2; break;
    case latent::LatentKind::Sequential:
      spec.states = 8;
      spec.length = 2;
      spec.code_dim = 2;
      break;
  }
  read(m, "model", "states", spec.states);
  read(m, "model", "latent_dim", spec.latent_dim);
  read(m, "model", "length", spec.length);
  read(m, "model", "code_dim", spec.code_dim);
  try {
    spec.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  cfg.model.latent = spec;
  read(m, "model", "flow_depth", cfg.model.flow_depth);
  read(m, "model", "flow_width", cfg.model.flow_width);
  read(m, "model", "flow_hidden_layers", cfg.model.flow_hidden_layers);
  read(m, "model", "encoder_width", cfg.model.encoder_width);
  read(m, "model", "encoder_hidden_layers", cfg.model.encoder_hidden_layers);
  if (cfg.model.flow_width == 0 || cfg.model.encoder_width == 0) throw ConfigError("model: widths must be positive");

  const json& t = doc.contains("train") ? doc.at("train") : empty;
  check_keys(t, "train",
             {"learning_rate", "batch_size", "steps", "k", "seed", "tau_start", "tau_end", "clip_norm", "eval_every",
              "kl_warmup", "prior_lr_scale", "discrete_gradient"});
  if (tabular(cfg.data.source)) cfg.train.learning_rate = 5e-4;
  read(t, "train", "learning_rate", cfg.train.learning_rate);
  read(t, "train", "batch_size", cfg.train.batch_size);
  read(t, "train", "steps", cfg.train.steps);
  read(t, "train", "k", cfg.train.k);
  read(t, "train", "seed", cfg.train.seed);
  read(t, "train", "tau_start", cfg.train.tau_start);
  read(t, "train", "tau_end", cfg.train.tau_end);
  read(t, "train", "clip_norm", cfg.train.clip_norm);
  read(t, "train", "eval_every", cfg.train.eval_every);
  read(t, "train", "kl_warmup", cfg.train.kl_warmup);
  read(t, "train", "prior_lr_scale", cfg.train.prior_lr_scale);
  std::string gradient = training::to_string(cfg.train.discrete_gradient);
  read(t, "train", "discrete_gradient", gradient);
  try {
    cfg.train.discrete_gradient = training::discrete_gradient_from_string(gradient);
  } catch (const std::exception& ex) {
    throw ConfigError(std::string("train.discrete_gradient: ") + ex.what());
  }
  try {
    cfg.train.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }

  const json& e = doc.contains("eval") ? doc.at("eval") : empty;
  check_keys(e, "eval", {"estimator", "k"});
  read(e, "eval", "estimator", cfg.eval.estimator);
  read(e, "eval", "k", cfg.eval.k);
  if (cfg.eval.k == 0) throw ConfigError("eval.k: must be at least 1");
  if (!cfg.eval.estimator.empty()) {
    static const std::set<std::string> estimators{"exact", "topk", "iw"};
    if (!estimators.count(cfg.eval.estimator)) {
      throw ConfigError("eval.estimator: unknown estimator '" + cfg.eval.estimator + "'");
    }
  }
  return cfg;
}

json config_to_json(const RunConfig& c) {
  json doc;
  doc["data"] = {{"source", c.data.source},
                 {"n", c.data.n},
                 {"dim", c.data.dim},
                 {"noise", c.data.noise},
                 {"mu", c.data.mu},
                 {"sigma", c.data.sigma},
                 {"components", c.data.components},
                 {"radius", c.data.radius},
                 {"pairs", c.data.pairs},
                 {"path", c.data.path},
                 {"fractions", c.data.fractions},
                 {"seed", c.data.seed}};
  const auto& s = c.model.latent;
  doc["model"] = {{"latent", latent::to_string(s.kind)},
                  {"states", s.states},
                  {"latent_dim", s.latent_dim},
                  {"length", s.length},
                  {"code_dim", s.code_dim},
                  {"flow_depth", c.model.flow_depth},
                  {"flow_width", c.model.flow_width},
                  {"flow_hidden_layers", c.model.flow_hidden_layers},
                  {"encoder_width", c.model.encoder_width},
                  {"encoder_hidden_layers", c.model.encoder_hidden_layers}};
  doc["train"] = {{"learning_rate", c.train.learning_rate},
                  {"batch_size", c.train.batch_size},
                  {"steps", c.train.steps},
                  {"k", c.train.k},
                  {"seed", c.train.seed},
                  {"tau_start", c.train.tau_start},
                  {"tau_end", c.train.tau_end},
                  {"clip_norm", c.train.clip_norm},
                  {"eval_every", c.train.eval_every},
                  {"kl_warmup", c.train.kl_warmup},
                  {"prior_lr_scale", c.train.prior_lr_scale},
                  {"discrete_gradient", training::to_string(c.train.discrete_gradient)}};
  doc["eval"] = {{"estimator", c.eval.estimator}, {"k", c.eval.k}};
  return doc;
}

RunConfig parse_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return config_from_json(doc);
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string config_defaults_text() {
  return R"(Config file (JSON, unknown keys rejected). Defaults:
  data:  source=two_moons (gmm1d | gmm2d | two_moons | gmm_pairs | clusters | csv), n=1280,
         fractions=[0.8,0.1,0.1], seed=0
         two_moons: noise=0.05
         gmm1d:     mu=2, sigma=0.1
         gmm2d:     components=8, radius=4, sigma=0.5 (centers on a ring)
         gmm_pairs: n=5000, pairs=4, components=2, radius=2, sigma=0.5
         clusters:  n=5000, dim=8, components=8, radius=3 (centers uniform in
                    [-radius, radius]^dim), sigma=0.5
         csv:       path (required)
  model: latent=discrete (none | discrete | continuous | sequential)
         discrete: states=8; continuous: latent_dim=2;
         sequential: states=8, length=2, code_dim=2
         flow_depth=4, flow_width=32, flow_hidden_layers=2,
         encoder_width=16, encoder_hidden_layers=3
  train: learning_rate=3e-3 (5e-4 for csv), batch_size=128, steps=2000, k=1,
         seed=0, tau_start=1.0, tau_end=0.5, clip_norm=10, eval_every=100,
         kl_warmup=0.5 (fraction of steps), prior_lr_scale=10,
         discrete_gradient=enumerate (enumerate | gumbel)
  eval:  estimator=regime default (exact | topk | iw), k=16
)";
}

data::Dataset build_raw_dataset(const DataConfig& c) {
  const auto& s = c.source;
  if (s == "gmm1d") return data::gen_gmm1d(c.n, c.mu, c.sigma, c.seed);
  if (s == "two_moons") return data::gen_two_moons(c.n, c.noise, c.seed);
  if (s == "gmm2d") {
    if (c.components == 0) throw ConfigError("data.components: must be at least 1");
    const std::vector<double> w(c.components, 1.0 / static_cast<double>(c.components));
    return data::gen_gmm2d(c.n, data::ring_centers(c.components, c.radius), c.sigma, w, c.seed);
  }
  if (s == "gmm_pairs") {
    if (c.components == 0) throw ConfigError("data.components: must be at least 1");
    return data::gen_gmm_pairs(c.n, c.pairs, data::ring_centers(c.components, c.radius), c.sigma, c.seed);
  }
  if (s == "clusters") return data::gen_clusters(c.n, c.dim, c.components, c.radius, c.sigma, c.seed);
  if (s == "csv") return data::load_csv(c.path);
  throw ConfigError("data.source: unknown source '" + s + "'");
}

data::Dataset build_dataset(const DataConfig& c) {
  auto ds = data::standardize_and_split(build_raw_dataset(c), c.fractions, c.seed);
  if (ds.stats.dim() == 0) throw data::DataError("every column has zero variance on the train split");
  return ds;
}

}  // namespace nvf
