// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "nvf/data.hpp"
#include "nvf/model.hpp"
#include "nvf/training.hpp"

namespace nvf {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dataset recipe. `source` selects a generator (gmm1d, gmm2d, two_moons,
/// gmm_pairs, clusters) or csv; fields unused by the source are ignored.
struct DataConfig {
  std::string source = "two_moons";
  std::size_t n = 1280;
  std::size_t dim = 8;
  double noise = 0.05;
  double mu = 2.0;
  double sigma = 0.1;
  std::size_t components = 8;
  double radius = 4.0;
  std::size_t pairs = 4;
  std::string path;
  std::array<double, 3> fractions{0.8, 0.1, 0.1};
  std::uint64_t seed = 0;
};

struct EvalConfig {
  /// Empty selects the regime default.
  std::string estimator;
  std::size_t k = 16;
};

struct RunConfig {
  DataConfig data;
  ModelConfig model;
  training::TrainConfig train;
  EvalConfig eval;
};

/// Strict parse: unknown keys and wrong types are rejected. Syntax errors
/// carry the line and column.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
RunConfig config_from_json(const nlohmann::json& doc);
nlohmann::json config_to_json(const RunConfig& config);

/// Default values for every section, printed by `nvf train --help`.
std::string config_defaults_text();

/// The generator draw (or CSV file) before standardization.
data::Dataset build_raw_dataset(const DataConfig& config);
/// Raw data standardized and split per the config.
data::Dataset build_dataset(const DataConfig& config);

}  // namespace nvf
