// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "nvf/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace nvf::flow {

namespace {

// Pre-activation bound for every exp inside a flow layer.
constexpr double kExpClamp = 30.0;

}  // namespace

ReversePermutation::ReversePermutation(std::size_t dim) : order_(dim) {
  for (std::size_t i = 0; i < dim; ++i) order_[i] = dim - 1 - i;
}

FlowOutput ReversePermutation::forward(Tape& tape, Var z) const {
  const auto batch = z.shape().at(0);
  return {ad::permute_last(z, order_), tape.constant(ad::Tensor::zeros({batch}))};
}

// ---------------------------------------------------------------------------

LuLinear::LuLinear(const std::string& prefix, std::vector<std::size_t> permutation)
    : perm_(std::move(permutation)), inverse_perm_(perm_.size()) {
  const auto d = perm_.size();
  for (std::size_t i = 0; i < d; ++i) inverse_perm_.at(perm_[i]) = i;
  lower = Parameter(prefix + ".lower", ad::Tensor::zeros({d, d}));
  upper = Parameter(prefix + ".upper", ad::Tensor::zeros({d, d}));
  log_diag = Parameter(prefix + ".log_diag", ad::Tensor::zeros({d}));
}

LuLinear::Factors LuLinear::factors(Tape& tape) {
  const auto d = dim();
  ad::Tensor strict_lower = ad::Tensor::zeros({d, d});
  ad::Tensor strict_upper = ad::Tensor::zeros({d, d});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      if (j < i) strict_lower.at(i, j) = 1.0;
      if (j > i) strict_upper.at(i, j) = 1.0;
    }
  const Var eye = tape.constant(ad::Tensor::identity(d));
  // exp input clamped to [-30, 30]
  const Var ld = ad::clamp(tape.param(log_diag), -kExpClamp, kExpClamp);
  const Var diag = ad::broadcast(ad::exp(ld), d) * eye;
  const Var l = tape.param(lower) * tape.constant(std::move(strict_lower)) + eye;
  const Var u = tape.param(upper) * tape.constant(std::move(strict_upper)) + diag;
  return {l, u, ad::sum(ld)};
}

FlowOutput LuLinear::forward(Tape& tape, Var z) {
  const auto batch = z.shape().at(0);
  auto [l, u, lds] = factors(tape);
  const Var y = ad::matmul(ad::matmul(z, ad::transpose(u)), ad::transpose(l));
  return {ad::permute_last(y, perm_), ad::broadcast(lds, batch)};
}

FlowOutput LuLinear::inverse(Tape& tape, Var x) {
  const auto batch = x.shape().at(0);
  auto [l, u, lds] = factors(tape);
  const Var y = ad::permute_last(x, inverse_perm_);
  const Var w = ad::tri_solve(l, y, /*lower=*/true, /*unit_diagonal=*/true);
  const Var z = ad::tri_solve(u, w, /*lower=*/false, /*unit_diagonal=*/false);
  return {z, ad::neg(ad::broadcast(lds, batch))};
}

// ---------------------------------------------------------------------------

AffineCoupling::AffineCoupling(const std::string& prefix, std::size_t dim, std::size_t split,
                               std::size_t context_dim, std::size_t width, std::size_t hidden_layers, Rng& rng)
    : dim_(dim), split_(split), context_dim_(context_dim) {
  if (dim == 0 || split >= dim || (split == 0 && dim > 1)) {
    throw std::invalid_argument("AffineCoupling: split must satisfy 1 <= split < dim (0 allowed only for dim 1)");
  }
  net_ = nn::Mlp(prefix + ".net", split + context_dim, width, hidden_layers, 2 * (dim - split), rng,
                 /*zero_last=*/true);
}

AffineCoupling::ScaleShift AffineCoupling::condition(Tape& tape, Var untouched, Var context) {
  const auto active = dim_ - split_;
  const Var h = net_.forward(tape, ad::concat({untouched, context}));
  const Var raw = ad::slice(h, 0, active);
  const Var s = ad::scale(ad::tanh(ad::scale(raw, 1.0 / kScaleBound)), kScaleBound);
  return {s, ad::slice(h, active, 2 * active)};
}

FlowOutput AffineCoupling::forward(Tape& tape, Var z, Var context) {
  const Var z1 = ad::slice(z, 0, split_);
  const Var z2 = ad::slice(z, split_, dim_);
  auto [s, t] = condition(tape, z1, context);
  // exp input clamped to [-30, 30]; inactive while |s| < 5
  const Var x2 = z2 * ad::exp(ad::clamp(s, -kExpClamp, kExpClamp)) + t;
  return {ad::concat({z1, x2}), ad::sum_last(s)};
}

FlowOutput AffineCoupling::inverse(Tape& tape, Var x, Var context) {
  const Var x1 = ad::slice(x, 0, split_);
  const Var x2 = ad::slice(x, split_, dim_);
  auto [s, t] = condition(tape, x1, context);
  // exp input clamped to [-30, 30]; inactive while |s| < 5
  const Var z2 = (x2 - t) * ad::exp(ad::clamp(ad::neg(s), -kExpClamp, kExpClamp));
  return {ad::concat({x1, z2}), ad::neg(ad::sum_last(s))};
}

// ---------------------------------------------------------------------------

FlowOutput layer_forward(FlowLayer& layer, Tape& tape, Var z, Var context) {
  return std::visit(
      [&](auto& l) -> FlowOutput {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, AffineCoupling>) {
          return l.forward(tape, z, context);
        } else {
          return l.forward(tape, z);
        }
      },
      layer);
}

FlowOutput layer_inverse(FlowLayer& layer, Tape& tape, Var x, Var context) {
  return std::visit(
      [&](auto& l) -> FlowOutput {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, AffineCoupling>) {
          return l.inverse(tape, x, context);
        } else {
          return l.inverse(tape, x);
        }
      },
      layer);
}

std::size_t default_split(std::size_t dim) { return dim / 2; }

Var empty_context(Tape& tape, std::size_t batch) { return tape.constant(ad::Tensor::zeros({batch, 0})); }

Var standard_normal_log_prob(Var z) {
  const auto d = static_cast<double>(z.value().last_dim());
  const double log_norm = -0.5 * d * std::log(2.0 * std::numbers::pi);
  return ad::add_scalar(ad::scale(ad::sum_last(z * z), -0.5), log_norm);
}

// ---------------------------------------------------------------------------

FlowStack FlowStack::build(const FlowConfig& config, Rng& rng) {
  FlowStack stack(config.dim, config.context_dim);
  for (std::size_t i = 0; i < config.depth; ++i) {
    const std::string prefix = "flow." + std::to_string(i);
    std::vector<std::size_t> perm(config.dim);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t k = perm.size(); k > 1; --k) std::swap(perm[k - 1], perm[rng.index(k)]);
    stack.push(ReversePermutation(config.dim));
    stack.push(LuLinear(prefix + ".lu", std::move(perm)));
    stack.push(AffineCoupling(prefix + ".coupling", config.dim, default_split(config.dim), config.context_dim,
                              config.width, config.hidden_layers, rng));
  }
  return stack;
}

void FlowStack::push(FlowLayer layer) {
  const auto d = std::visit([](const auto& l) { return l.dim(); }, layer);
  if (d != dim_) throw std::invalid_argument("FlowStack::push: layer dimension mismatch");
  if (const auto* c = std::get_if<AffineCoupling>(&layer); c && c->context_dim() != context_dim_) {
    throw std::invalid_argument("FlowStack::push: coupling context dimension mismatch");
  }
  layers_.push_back(std::move(layer));
}

void FlowStack::check_inputs(Var v, Var context) const {
  const auto& s = v.shape();
  const auto& c = context.shape();
  if (s.size() != 2 || s[1] != dim_ || c.size() != 2 || c[0] != s[0] || c[1] != context_dim_) {
    throw ad::ShapeError("FlowStack: expected [b," + std::to_string(dim_) + "] data and [b," +
                         std::to_string(context_dim_) + "] context, got " + ad::shape_string(s) + " and " +
                         ad::shape_string(c));
  }
}

FlowOutput FlowStack::forward(Tape& tape, Var z, Var context) {
  check_inputs(z, context);
  Var logdet = tape.constant(ad::Tensor::zeros({z.shape()[0]}));
  for (auto& layer : layers_) {
    auto out = layer_forward(layer, tape, z, context);
    z = out.value;
    logdet = logdet + out.logdet;
  }
  return {z, logdet};
}

FlowOutput FlowStack::inverse(Tape& tape, Var x, Var context) {
  check_inputs(x, context);
  Var logdet = tape.constant(ad::Tensor::zeros({x.shape()[0]}));
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    auto out = layer_inverse(*it, tape, x, context);
    x = out.value;
    logdet = logdet + out.logdet;
  }
  return {x, logdet};
}

Var FlowStack::conditional_log_prob(Tape& tape, Var x, Var context) {
  auto [z, logdet] = inverse(tape, x, context);
  return standard_normal_log_prob(z) + logdet;
}

std::vector<Parameter*> FlowStack::parameters() {
  std::vector<Parameter*> out;
  for (auto& layer : layers_) {
    if (auto* lu = std::get_if<LuLinear>(&layer)) {
      for (auto* p : lu->parameters()) out.push_back(p);
    } else if (auto* c = std::get_if<AffineCoupling>(&layer)) {
      for (auto* p : c->parameters()) out.push_back(p);
    }
  }
  return out;
}

}  // namespace nvf::flow
