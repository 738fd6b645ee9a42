// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nvf/model.hpp"

namespace nvf::training {

using ad::Parameter;
using ad::Tape;
using ad::Tensor;
using ad::Var;

/// How the discrete-latent ELBO expectation over nu(u|x) is taken: exactly over
/// all s states, or by hard Gumbel-softmax samples with straight-through gradients.
enum class DiscreteGradient { Enumerate, Gumbel };

const char* to_string(DiscreteGradient g);
DiscreteGradient discrete_gradient_from_string(const std::string& name);

struct TrainConfig {
  double learning_rate = 3e-3;
  std::size_t batch_size = 128;
  std::size_t steps = 2000;
  std::size_t k = 1;  // Monte Carlo samples per data point
  std::uint64_t seed = 0;
  double tau_start = 1.0;
  double tau_end = 0.5;
  double clip_norm = 10.0;
  std::size_t eval_every = 100;
  /// Fraction of steps over which the KL weight rises linearly from 0 to 1.
  double kl_warmup = 0.5;
  /// Multiplier on the learning rate for the learnable-prior (beta) steps.
  double prior_lr_scale = 10.0;
  DiscreteGradient discrete_gradient = DiscreteGradient::Enumerate;

  void validate() const;
};

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t t = 0;
  std::size_t skipped = 0;
};

/// Bias-corrected Adam update from each parameter's grad. Non-finite gradients
/// skip the step (counted in state.skipped) and return false.
bool adam_step(std::span<Parameter* const> params, AdamState& state, double lr);

/// lr_max * (1 + cos(pi * step / total)) / 2.
double cosine_lr(std::size_t step, std::size_t total, double lr_max);

/// Linear anneal from tau_start to tau_end over the first half of training, then constant.
double gumbel_temperature(std::size_t step, std::size_t total, double tau_start, double tau_end);

/// Rescales gradients so their global L2 norm is at most max_norm; returns the norm before clipping.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

/// Batch mean of -(1/K) sum_k log p(x | u_k) + KL(nu(.|x) || pi) with u_k drawn
/// from the posterior (Gumbel-softmax or reparameterized Gaussian). With
/// DiscreteGradient::Enumerate the discrete expectation is exact and K is
/// unused. The latent-free baseline reduces to the flow NLL.
Var elbo_loss(NvfModel& model, Tape& tape, const Tensor& x, std::size_t k, double temperature, Rng& rng,
              DiscreteGradient discrete = DiscreteGradient::Gumbel);

/// The two batch-mean terms of elbo_loss: flow NLL and KL.
struct ElboTerms {
  Var nll;
  Var kl;
};
ElboTerms elbo_terms(NvfModel& model, Tape& tape, const Tensor& x, std::size_t k, double temperature, Rng& rng,
                     DiscreteGradient discrete = DiscreteGradient::Gumbel);

/// KL weight: step / (warmup * total) during warm-up, then 1.
double kl_weight(std::size_t step, std::size_t total, double warmup);

struct ReducedLoss {
  Var loss;
  /// Quantized code sequences per row, detached from the graph.
  std::vector<std::vector<std::size_t>> codes;
};

/// Learnable-prior loss for (theta, phi): flow NLL under the quantized code
/// plus the VQ codebook/commitment loss, averaged over the batch. The
/// posterior is deterministic, so K > 1 repeats the same code and is not replicated.
ReducedLoss reduced_loss_theta_phi(NvfModel& model, Tape& tape, const Tensor& x, std::size_t k);

/// Mean negative log prior mass of the codes; touches beta only.
Var prior_loss_beta(latent::PriorModel& prior, Tape& tape, const std::vector<std::vector<std::size_t>>& codes);

struct MetricRow {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::optional<double> val_nll;
};

struct TrainResult {
  std::vector<MetricRow> metrics;
  double best_val_nll = 0.0;
  std::size_t best_step = 0;
  std::size_t skipped_steps = 0;
};

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mean validation NLL in standardized units with the regime's estimator.
double validation_nll(NvfModel& model, const Tensor& x);

/// Runs the alternating NVF loop for config.steps steps, keeping the
/// parameters of the best validation NLL seen at each evaluation. Throws
/// TrainingAborted after 10 consecutive non-finite steps.
TrainResult train(NvfModel& model, const TrainConfig& config, const Tensor& train_x, const Tensor& val_x,
                  Rng& rng);

/// `step,loss,lr,val_nll` with a header row; val_nll is empty between evaluations.
void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& metrics);

}  // namespace nvf::training
