// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "nvf/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <variant>

namespace nvf::checkpoint {

using nlohmann::json;

namespace {

constexpr std::size_t kPrefixBytes = 12;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

json flow_layers_json(flow::FlowStack& stack) {
  json layers = json::array();
  for (auto& layer : stack.layers()) {
    if (std::holds_alternative<flow::ReversePermutation>(layer)) {
      layers.push_back({{"type", "reverse"}});
    } else if (const auto* lu = std::get_if<flow::LuLinear>(&layer)) {
      layers.push_back({{"type", "lu"}, {"permutation", lu->permutation()}});
    } else {
      const auto& c = std::get<flow::AffineCoupling>(layer);
      layers.push_back({{"type", "coupling"}, {"split", c.split()}});
    }
  }
  return layers;
}

}  // namespace

std::string serialize(NvfModel& model, const data::Standardization& stats, const json& config) {
  const auto& cfg = model.config();
  json header;
  header["format_version"] = kFormatVersion;
  header["latent"] = {{"kind", latent::to_string(cfg.latent.kind)},
                      {"states", cfg.latent.states},
                      {"latent_dim", cfg.latent.latent_dim},
                      {"length", cfg.latent.length},
                      {"code_dim", cfg.latent.code_dim}};
  header["architecture"] = {{"dim", cfg.dim},
                            {"flow_depth", cfg.flow_depth},
                            {"flow_width", cfg.flow_width},
                            {"flow_hidden_layers", cfg.flow_hidden_layers},
                            {"encoder_width", cfg.encoder_width},
                            {"encoder_hidden_layers", cfg.encoder_hidden_layers},
                            {"layers", flow_layers_json(model.flow())}};
  json manifest = json::array();
  std::uint64_t offset = 0;
  std::string payload;
  for (const auto* p : model.parameters()) {
    manifest.push_back({{"name", p->name}, {"shape", p->value.shape()}, {"offset", offset}});
    for (double v : p->value.values()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      put_u64(payload, bits);
    }
    offset += 8 * p->value.size();
  }
  header["manifest"] = manifest;
  header["payload_bytes"] = offset;
  header["standardization"] = {{"mean", stats.mean},
                               {"std", stats.stddev},
                               {"kept", stats.kept},
                               {"log_jacobian", stats.log_jacobian}};
  header["config"] = config;

  const std::string text = header.dump();
  std::string out(kMagic, sizeof kMagic);
  put_u64(out, text.size());
  out += text;
  out += payload;
  return out;
}

Checkpoint deserialize(const std::string& bytes, const std::string& source) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(source + ": bad magic (not an NVF1 checkpoint)");
  }
  if (bytes.size() < kPrefixBytes) {
    throw CheckpointError(source + ": truncated: expected at least " + std::to_string(kPrefixBytes) +
                          " bytes, found " + std::to_string(bytes.size()));
  }
  const auto header_len = get_u64(bytes.data() + sizeof kMagic);
  if (header_len > bytes.size() - kPrefixBytes) {
    throw CheckpointError(source + ": truncated: expected at least " + std::to_string(kPrefixBytes + header_len) +
                          " bytes, found " + std::to_string(bytes.size()));
  }
  json header;
  try {
    header = json::parse(bytes.substr(kPrefixBytes, header_len));
  } catch (const json::parse_error& e) {
    throw CheckpointError(source + ": corrupt header: " + e.what());
  }

  Checkpoint out;
  try {
    const int version = header.at("format_version").get<int>();
    if (version != kFormatVersion) {
      throw CheckpointError(source + ": unsupported format_version " + std::to_string(version) + " (reader supports " +
                            std::to_string(kFormatVersion) + ")");
    }
    const auto payload_bytes = header.at("payload_bytes").get<std::uint64_t>();
    const auto expected = kPrefixBytes + header_len + payload_bytes;
    if (bytes.size() != expected) {
      throw CheckpointError(source + ": " + (bytes.size() < expected ? "truncated" : "trailing data") +
                            ": expected " + std::to_string(expected) + " bytes, found " +
                            std::to_string(bytes.size()));
    }

    const auto& lat = header.at("latent");
    latent::LatentSpec spec{latent::latent_kind_from_string(lat.at("kind").get<std::string>()),
                            lat.at("states").get<std::size_t>(), lat.at("latent_dim").get<std::size_t>(),
                            lat.at("length").get<std::size_t>(), lat.at("code_dim").get<std::size_t>()};
    const auto& arch = header.at("architecture");
    ModelConfig mc;
    mc.dim = arch.at("dim").get<std::size_t>();
    mc.latent = spec;
    mc.flow_depth = arch.at("flow_depth").get<std::size_t>();
    mc.flow_width = arch.at("flow_width").get<std::size_t>();
    mc.flow_hidden_layers = arch.at("flow_hidden_layers").get<std::size_t>();
    mc.encoder_width = arch.at("encoder_width").get<std::size_t>();
    mc.encoder_hidden_layers = arch.at("encoder_hidden_layers").get<std::size_t>();
    Rng rng(0);
    out.model = std::make_unique<NvfModel>(mc, rng);

    auto& layers = out.model->flow().layers();
    const auto& saved_layers = arch.at("layers");
    if (saved_layers.size() != layers.size()) {
      throw CheckpointError(source + ": manifest inconsistent: architecture has " +
                            std::to_string(saved_layers.size()) + " layers, model has " +
                            std::to_string(layers.size()));
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (auto* lu = std::get_if<flow::LuLinear>(&layers[i])) {
        const auto& saved = saved_layers[i];
        if (saved.at("type").get<std::string>() != "lu") {
          throw CheckpointError(source + ": manifest inconsistent: layer " + std::to_string(i) + " type");
        }
        auto prefix = lu->lower.name.substr(0, lu->lower.name.rfind('.'));
        layers[i] = flow::LuLinear(prefix, saved.at("permutation").get<std::vector<std::size_t>>());
      }
    }

    const auto& manifest = header.at("manifest");
    const auto params = out.model->parameters();
    if (manifest.size() != params.size()) {
      throw CheckpointError(source + ": manifest inconsistent: " + std::to_string(manifest.size()) +
                            " entries for " + std::to_string(params.size()) + " parameters");
    }
    const char* payload = bytes.data() + kPrefixBytes + header_len;
    std::uint64_t offset = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      const auto& entry = manifest[i];
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<ad::Shape>();
      if (name != p.name || shape != p.value.shape() || entry.at("offset").get<std::uint64_t>() != offset) {
        throw CheckpointError(source + ": manifest inconsistent at entry " + std::to_string(i) + " ('" + name + "')");
      }
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        const std::uint64_t bits = get_u64(payload + offset + 8 * j);
        std::memcpy(&p.value[j], &bits, sizeof bits);
      }
      offset += 8 * p.value.size();
    }
    if (offset != payload_bytes) {
      throw CheckpointError(source + ": manifest inconsistent: manifest covers " + std::to_string(offset) +
                            " payload bytes, header declares " + std::to_string(payload_bytes));
    }

    const auto& st = header.at("standardization");
    out.stats.mean = st.at("mean").get<std::vector<double>>();
    out.stats.stddev = st.at("std").get<std::vector<double>>();
    out.stats.kept = st.at("kept").get<std::vector<std::size_t>>();
    out.stats.log_jacobian = st.at("log_jacobian").get<double>();
    out.config = header.at("config");
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(source + ": malformed header: " + e.what());
  }
  return out;
}

void save(NvfModel& model, const data::Standardization& stats, const json& config, const std::string& path) {
  const auto bytes = serialize(model, stats, config);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for " + path);
}

Checkpoint load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str(), path);
}

}  // namespace nvf::checkpoint
