// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "nvf/nn.hpp"

#include <cmath>

namespace nvf::nn {

Linear::Linear(const std::string& prefix, std::size_t in, std::size_t out, Rng& rng, bool zero_init) {
  ad::Tensor w = ad::Tensor::zeros({in, out});
  ad::Tensor b = ad::Tensor::zeros({out});
  if (!zero_init) {
    const double bound = in == 0 ? 1.0 : 1.0 / std::sqrt(static_cast<double>(in));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = rng.uniform(-bound, bound);
  }
  weight = Parameter(prefix + ".weight", std::move(w));
  bias = Parameter(prefix + ".bias", std::move(b));
}

Var Linear::forward(Tape& tape, Var x) {
  const auto rows = x.shape().at(0);
  return ad::matmul(x, tape.param(weight)) + ad::broadcast(tape.param(bias), rows);
}

Mlp::Mlp(const std::string& prefix, std::size_t in, std::size_t width, std::size_t hidden_layers, std::size_t out,
         Rng& rng, bool zero_last) {
  std::size_t fan_in = in;
  for (std::size_t i = 0; i < hidden_layers; ++i) {
    layers_.emplace_back(prefix + "." + std::to_string(i), fan_in, width, rng);
    fan_in = width;
  }
  layers_.emplace_back(prefix + "." + std::to_string(hidden_layers), fan_in, out, rng, zero_last);
}

Var Mlp::forward(Tape& tape, Var x) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i].forward(tape, x);
    if (i + 1 < layers_.size()) x = ad::relu(x);
  }
  return x;
}

std::vector<Parameter*> Mlp::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

}  // namespace nvf::nn
