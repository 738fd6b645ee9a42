// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "nvf/autodiff.hpp"
#include "nvf/random.hpp"

namespace nvf::nn {

using ad::Parameter;
using ad::Tape;
using ad::Var;

/// y = x W + b with W stored as [in, out].
struct Linear {
  Linear() = default;
  Linear(const std::string& prefix, std::size_t in, std::size_t out, Rng& rng, bool zero_init = false);

  Var forward(Tape& tape, Var x);
  std::size_t in_features() const { return weight.value.dim(0); }
  std::size_t out_features() const { return weight.value.dim(1); }

  Parameter weight;
  Parameter bias;
};

/// ReLU multilayer perceptron: `hidden_layers` hidden layers of `width` units.
class Mlp {
 public:
  Mlp() = default;
  /// zero_last zero-initializes the output layer so the network starts at a constant 0.
  Mlp(const std::string& prefix, std::size_t in, std::size_t width, std::size_t hidden_layers, std::size_t out,
      Rng& rng, bool zero_last = false);

  Var forward(Tape& tape, Var x);
  std::vector<Parameter*> parameters();
  std::vector<Linear>& layers() { return layers_; }
  const std::vector<Linear>& layers() const { return layers_; }
  std::size_t in_features() const { return layers_.front().in_features(); }
  std::size_t out_features() const { return layers_.back().out_features(); }

 private:
  std::vector<Linear> layers_;
};

}  // namespace nvf::nn
