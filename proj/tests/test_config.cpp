// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <fstream>

#include "nvf/config.hpp"
#include "support.hpp"

using namespace nvf;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

}  // namespace

TEST_CASE("defaults") {
  const auto c = parse_config("{}");
  CHECK(c.data.source == "two_moons");
  CHECK(c.data.n == 1280);
  CHECK(c.data.fractions == std::array<double, 3>{0.8, 0.1, 0.1});
  CHECK(c.model.latent == latent::LatentSpec::discrete(8));
  CHECK(c.model.flow_depth == 4);
  CHECK(c.model.flow_width == 32);
  CHECK(c.train.learning_rate == 3e-3);
  CHECK(c.train.batch_size == 128);
  CHECK(c.train.steps == 2000);
  CHECK(c.train.k == 1);
  CHECK(c.train.discrete_gradient == training::DiscreteGradient::Enumerate);
  CHECK(c.eval.estimator.empty());
  CHECK(c.eval.k == 16);
}

TEST_CASE("per-source and per-regime defaults") {
  const auto g1 = parse_config(R"({"data": {"source": "gmm1d"}})");
  CHECK(g1.data.mu == 2.0);
  CHECK(g1.data.sigma == 0.1);
  const auto g2 = parse_config(R"({"data": {"source": "gmm2d"}})");
  CHECK(g2.data.components == 8);
  CHECK(g2.data.radius == 4.0);
  CHECK(g2.data.sigma == 0.5);
  const auto cl = parse_config(R"({"data": {"source": "clusters", "sigma": 0.25}})");
  CHECK(cl.data.n == 5000);
  CHECK(cl.data.sigma == 0.25);
  const auto tab = parse_config(R"({"data": {"source": "csv", "path": "x.csv"}})");
  CHECK(tab.train.learning_rate == 5e-4);
  CHECK(parse_config(R"({"data": {"source": "csv", "path": "x.csv"}, "train": {"learning_rate": 0.01}})")
            .train.learning_rate == 0.01);
  CHECK(parse_config(R"({"model": {"latent": "sequential"}})").model.latent == latent::LatentSpec::sequential(8, 2, 2));
  CHECK(parse_config(R"({"model": {"latent": "continuous"}})").model.latent == latent::LatentSpec::continuous(2));
  CHECK(parse_config(R"({"model": {"latent": "none"}})").model.latent == latent::LatentSpec::none());
  CHECK(parse_config(R"({"train": {"discrete_gradient": "gumbel"}})").train.discrete_gradient ==
        training::DiscreteGradient::Gumbel);
}

TEST_CASE("strict parsing") {
  CHECK(contains(error_of(R"({"extra": 1})"), "unknown key 'extra'"));
  CHECK(contains(error_of(R"({"data": {"sourc": "gmm1d"}})"), "data: unknown key 'sourc'"));
  CHECK(contains(error_of(R"({"model": {"depth": 3}})"), "model: unknown key 'depth'"));
  CHECK(contains(error_of(R"({"train": {"lr": 3}})"), "train: unknown key 'lr'"));
  CHECK(contains(error_of(R"({"eval": {"K": 3}})"), "eval: unknown key 'K'"));
  CHECK(contains(error_of(R"({"train": {"steps": "10"}})"), "train.steps"));
  CHECK(contains(error_of(R"({"train": {"steps": -1}})"), "train.steps"));
  CHECK(contains(error_of(R"({"train": {"steps": 1.5}})"), "train.steps"));
  CHECK(contains(error_of(R"({"train": {"learning_rate": "fast"}})"), "train.learning_rate"));
  CHECK(contains(error_of(R"({"train": {"learning_rate": 0}})"), "train"));
  CHECK(contains(error_of(R"({"train": {"discrete_gradient": "reinforce"}})"), "train.discrete_gradient"));
  CHECK(contains(error_of(R"({"data": {"source": "mnist"}})"), "data.source"));
  CHECK(contains(error_of(R"({"data": {"source": "csv"}})"), "data.path"));
  CHECK(contains(error_of(R"({"data": {"fractions": [0.5, 0.5]}})"), "data.fractions"));
  CHECK(contains(error_of(R"({"model": {"latent": "hierarchical"}})"), "model.latent"));
  CHECK(contains(error_of(R"({"model": {"latent": "discrete", "states": 0}})"), "model"));
  CHECK(contains(error_of(R"({"eval": {"estimator": "quad"}})"), "eval.estimator"));
  CHECK(contains(error_of(R"({"eval": {"k": 0}})"), "eval.k"));
  CHECK(contains(error_of(R"({"data": 3})"), "data: expected an object"));
  CHECK(contains(error_of("[]"), "config"));
}

TEST_CASE("syntax errors carry the line") {
  const auto msg = error_of("{\n  \"train\": {\n    \"steps\": 10,\n  }\n}\n");
  CHECK(contains(msg, "line 4"));
}

TEST_CASE("json round trip") {
  const auto c = parse_config(
      R"({"data": {"source": "gmm2d", "seed": 4}, "model": {"latent": "sequential", "length": 3},
          "train": {"steps": 17, "tau_end": 0.3, "discrete_gradient": "gumbel"}, "eval": {"estimator": "topk", "k": 5}})");
  const auto doc = config_to_json(c);
  const auto again = config_from_json(doc);
  CHECK(config_to_json(again) == doc);
  CHECK(doc["train"]["discrete_gradient"] == "gumbel");
  CHECK(doc["model"]["length"] == 3);
}

TEST_CASE("help text documents every key") {
  const auto help = config_defaults_text();
  const auto doc = config_to_json(parse_config("{}"));
  for (const auto& [section, body] : doc.items()) {
    for (const auto& [key, _] : body.items()) {
      CAPTURE(key);
      CHECK(contains(help, key));
    }
  }
}

TEST_CASE("datasets from configs") {
  const auto c = parse_config(R"({"data": {"source": "gmm1d", "n": 200, "seed": 3}})");
  const auto ds = build_dataset(c.data);
  CHECK(ds.train.size() == 160);
  CHECK(ds.dim() == 1);
  CHECK(build_dataset(c.data).matrix == ds.matrix);
  CHECK(build_raw_dataset(c.data).matrix == data::gen_gmm1d(200, 2.0, 0.1, 3).matrix);

  test::TempDir dir("config");
  const auto flat = dir.file("flat.csv");
  {
    std::ofstream f(flat);
    f << "a,b\n1,2\n1,2\n1,2\n1,2\n";
  }
  auto fc = parse_config(R"({"data": {"source": "csv", "path": ")" + flat + R"("}})");
  CHECK_THROWS_AS(build_dataset(fc.data), data::DataError);

  const auto cfg_path = dir.file("run.json");
  {
    std::ofstream f(cfg_path);
    f << R"({"train": {"steps": 0)";
  }
  try {
    load_config(cfg_path);
    FAIL("expected a parse error");
  } catch (const ConfigError& e) {
    CHECK(contains(e.what(), cfg_path));
  }
  CHECK_THROWS_AS(load_config(dir.file("missing.json")), ConfigError);
}
