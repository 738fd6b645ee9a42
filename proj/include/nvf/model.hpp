// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <vector>

#include "nvf/autodiff.hpp"
#include "nvf/flow.hpp"
#include "nvf/latent.hpp"
#include "nvf/nn.hpp"

namespace nvf {

struct ModelConfig {
  std::size_t dim = 1;
  latent::LatentSpec latent;
  std::size_t flow_depth = 4;
  std::size_t flow_width = 32;
  std::size_t flow_hidden_layers = 2;
  std::size_t encoder_width = 16;
  std::size_t encoder_hidden_layers = 3;

  flow::FlowConfig flow_config() const {
    return {dim, latent.context_dim(), flow_depth, flow_width, flow_hidden_layers};
  }
};

/// Conditional flow G(z, u) (theta), encoder posterior nu(u|x) (phi), and prior pi(u) (beta).
class NvfModel {
 public:
  NvfModel(const ModelConfig& config, Rng& rng);

  const ModelConfig& config() const { return config_; }
  const latent::LatentSpec& latent() const { return config_.latent; }
  std::size_t dim() const { return config_.dim; }

  flow::FlowStack& flow() { return flow_; }
  nn::Mlp& encoder();
  latent::Codebook& codebook();
  latent::PriorModel& prior() { return prior_; }
  const latent::PriorModel& prior() const { return prior_; }
  bool has_encoder() const { return encoder_.has_value(); }

  /// Flow and encoder parameters (theta, phi), including the codebook.
  std::vector<ad::Parameter*> theta_phi_parameters();
  /// Learnable prior parameters (beta); empty for fixed priors.
  std::vector<ad::Parameter*> beta_parameters() { return prior_.parameters(); }
  /// Every parameter in a fixed order: theta/phi first, then beta.
  std::vector<ad::Parameter*> parameters();

  /// Flattened codebook vectors for each sequence, [b, m * d_code].
  ad::Var context_for_codes(ad::Tape& tape, const std::vector<std::vector<std::size_t>>& codes);

  std::vector<ad::Tensor> snapshot();
  void restore(const std::vector<ad::Tensor>& values);

 private:
  ModelConfig config_;
  flow::FlowStack flow_;
  std::optional<nn::Mlp> encoder_;
  std::optional<latent::Codebook> codebook_;
  latent::PriorModel prior_;
};

}  // namespace nvf
