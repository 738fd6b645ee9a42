// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "nvf/data.hpp"
#include "nvf/model.hpp"

namespace nvf::checkpoint {

inline constexpr char kMagic[4] = {'N', 'V', 'F', '1'};
inline constexpr int kFormatVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  std::unique_ptr<NvfModel> model;
  data::Standardization stats;
  nlohmann::json config;
};

/// "NVF1", u64 little-endian header length, JSON header, then every
/// parameter as little-endian f64 in manifest order.
std::string serialize(NvfModel& model, const data::Standardization& stats, const nlohmann::json& config);
Checkpoint deserialize(const std::string& bytes, const std::string& source = "<memory>");

void save(NvfModel& model, const data::Standardization& stats, const nlohmann::json& config, const std::string& path);
Checkpoint load(const std::string& path);

}  // namespace nvf::checkpoint
