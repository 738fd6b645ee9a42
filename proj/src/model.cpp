// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "nvf/model.hpp"

#include <stdexcept>

namespace nvf {

using latent::LatentKind;

NvfModel::NvfModel(const ModelConfig& config, Rng& rng)
    : config_(config), flow_(config.dim, config.latent.context_dim()), prior_(latent::PriorModel::for_latent(config.latent)) {
  if (config.dim == 0) throw std::invalid_argument("model dimension must be positive");
  config.latent.validate();
  flow_ = flow::FlowStack::build(config.flow_config(), rng);
  if (config.latent.kind != LatentKind::None) {
    encoder_.emplace("encoder", config.dim, config.encoder_width, config.encoder_hidden_layers,
                     config.latent.encoder_outputs(), rng);
  }
  if (config.latent.kind == LatentKind::Sequential) {
    codebook_.emplace(config.latent.states, config.latent.code_dim, rng);
  }
}

nn::Mlp& NvfModel::encoder() {
  if (!encoder_) throw std::logic_error("model has no encoder (latent regime 'none')");
  return *encoder_;
}

latent::Codebook& NvfModel::codebook() {
  if (!codebook_) throw std::logic_error("model has no codebook (latent regime is not sequential)");
  return *codebook_;
}

std::vector<ad::Parameter*> NvfModel::theta_phi_parameters() {
  auto out = flow_.parameters();
  if (encoder_) {
    for (auto* p : encoder_->parameters()) out.push_back(p);
  }
  if (codebook_) out.push_back(&codebook_->vectors);
  return out;
}

std::vector<ad::Parameter*> NvfModel::parameters() {
  auto out = theta_phi_parameters();
  for (auto* p : beta_parameters()) out.push_back(p);
  return out;
}

ad::Var NvfModel::context_for_codes(ad::Tape& tape, const std::vector<std::vector<std::size_t>>& codes) {
  const auto m = config_.latent.length;
  std::vector<std::size_t> flat;
  flat.reserve(codes.size() * m);
  for (const auto& c : codes) {
    if (c.size() != m) throw std::out_of_range("code sequence length mismatch");
    flat.insert(flat.end(), c.begin(), c.end());
  }
  const ad::Var rows = ad::gather_rows(tape.param(codebook().vectors), flat);
  return ad::reshape(rows, {codes.size(), m * config_.latent.code_dim});
}

std::vector<ad::Tensor> NvfModel::snapshot() {
  std::vector<ad::Tensor> out;
  for (auto* p : parameters()) out.push_back(p->value);
  return out;
}

void NvfModel::restore(const std::vector<ad::Tensor>& values) {
  auto params = parameters();
  if (values.size() != params.size()) throw std::invalid_argument("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (values[i].shape() != params[i]->value.shape()) throw std::invalid_argument("restore: shape mismatch");
    params[i]->value = values[i];
  }
}

}  // namespace nvf
