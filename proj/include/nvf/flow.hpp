// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <variant>
#include <vector>

#include "nvf/autodiff.hpp"
#include "nvf/nn.hpp"
#include "nvf/random.hpp"

namespace nvf::flow {

using ad::Parameter;
using ad::Tape;
using ad::Var;

/// Architecture of a conditional flow. Each of the `depth` blocks is
/// [ReversePermutation, LuLinear, AffineCoupling]; `width` and `hidden_layers`
/// shape the coupling conditioner.
struct FlowConfig {
  std::size_t dim = 1;
  std::size_t context_dim = 0;
  std::size_t depth = 4;
  std::size_t width = 32;
  std::size_t hidden_layers = 2;
};

/// Batched transform result: value is [b, d]; logdet is [b].
struct FlowOutput {
  Var value;
  Var logdet;
};

/// Reverses the coordinate order. Volume preserving and self-inverse.
class ReversePermutation {
 public:
  explicit ReversePermutation(std::size_t dim);

  FlowOutput forward(Tape& tape, Var z) const;
  FlowOutput inverse(Tape& tape, Var x) const { return forward(tape, x); }
  std::size_t dim() const { return order_.size(); }

 private:
  std::vector<std::size_t> order_;
};

/// x = P L U z with L unit lower triangular, U upper triangular with
/// diagonal exp(log_diag), and P a permutation fixed at construction.
class LuLinear {
 public:
  LuLinear(const std::string& prefix, std::vector<std::size_t> permutation);

  FlowOutput forward(Tape& tape, Var z);
  /// Inverted with two triangular solves.
  FlowOutput inverse(Tape& tape, Var x);
  std::vector<Parameter*> parameters() { return {&lower, &upper, &log_diag}; }
  const std::vector<std::size_t>& permutation() const { return perm_; }
  std::size_t dim() const { return perm_.size(); }

  /// Entries strictly below the diagonal are used.
  Parameter lower;
  /// Entries strictly above the diagonal are used.
  Parameter upper;
  Parameter log_diag;

 private:
  struct Factors {
    Var l, u, logdet_sum;
  };
  Factors factors(Tape& tape);

  std::vector<std::size_t> perm_;
  std::vector<std::size_t> inverse_perm_;
};

/// Leaves the first `split` coordinates untouched and applies
/// x2 = z2 * exp(s) + t to the rest, where (s, t) come from a conditioner
/// reading (z1, context). The raw scale is squashed to (-5, 5) by 5 tanh(raw / 5).
class AffineCoupling {
 public:
  static constexpr double kScaleBound = 5.0;

  AffineCoupling(const std::string& prefix, std::size_t dim, std::size_t split, std::size_t context_dim,
                 std::size_t width, std::size_t hidden_layers, Rng& rng);

  FlowOutput forward(Tape& tape, Var z, Var context);
  FlowOutput inverse(Tape& tape, Var x, Var context);
  std::vector<Parameter*> parameters() { return net_.parameters(); }

  std::size_t dim() const { return dim_; }
  std::size_t split() const { return split_; }
  std::size_t context_dim() const { return context_dim_; }
  nn::Mlp& conditioner() { return net_; }

 private:
  struct ScaleShift {
    Var scale, shift;
  };
  ScaleShift condition(Tape& tape, Var untouched, Var context);

  std::size_t dim_;
  std::size_t split_;
  std::size_t context_dim_;
  nn::Mlp net_;
};

using FlowLayer = std::variant<ReversePermutation, LuLinear, AffineCoupling>;

FlowOutput layer_forward(FlowLayer& layer, Tape& tape, Var z, Var context);
FlowOutput layer_inverse(FlowLayer& layer, Tape& tape, Var x, Var context);

/// Default coupling split: half the coordinates (rounded down), or 0 in one dimension.
std::size_t default_split(std::size_t dim);

/// [b, 0] placeholder for unconditioned evaluation.
Var empty_context(Tape& tape, std::size_t batch);

/// Log density of the standard normal base measure per row: [b, d] -> [b].
Var standard_normal_log_prob(Var z);

class FlowStack {
 public:
  FlowStack(std::size_t dim, std::size_t context_dim) : dim_(dim), context_dim_(context_dim) {}

  static FlowStack build(const FlowConfig& config, Rng& rng);

  void push(FlowLayer layer);

  /// Generative direction z -> x; applies layers first to last.
  FlowOutput forward(Tape& tape, Var z, Var context);
  /// Density direction x -> z; logdet is log|d G^-1 / dx|.
  FlowOutput inverse(Tape& tape, Var x, Var context);
  /// log p_Z(G^-1(x, u)) + log|d G^-1 / dx| per row.
  Var conditional_log_prob(Tape& tape, Var x, Var context);

  std::vector<Parameter*> parameters();
  std::vector<FlowLayer>& layers() { return layers_; }
  const std::vector<FlowLayer>& layers() const { return layers_; }
  std::size_t dim() const { return dim_; }
  std::size_t context_dim() const { return context_dim_; }

 private:
  void check_inputs(Var v, Var context) const;

  std::size_t dim_;
  std::size_t context_dim_;
  std::vector<FlowLayer> layers_;
};

}  // namespace nvf::flow
