// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "nvf/autodiff.hpp"
#include "nvf/random.hpp"

namespace nvf::latent {

using ad::Parameter;
using ad::Tape;
using ad::Tensor;
using ad::Var;

/// None is the plain flow without a latent variable (the baseline).
enum class LatentKind { None, Discrete, Continuous, Sequential };

const char* to_string(LatentKind kind);
LatentKind latent_kind_from_string(const std::string& name);

struct LatentSpec {
  LatentKind kind = LatentKind::None;
  std::size_t states = 0;      // s: categories (Discrete) or codebook size (Sequential)
  std::size_t latent_dim = 0;  // d_u (Continuous)
  std::size_t length = 0;      // m (Sequential)
  std::size_t code_dim = 0;    // d_code (Sequential)

  static LatentSpec none() { return {}; }
  static LatentSpec discrete(std::size_t s) { return {LatentKind::Discrete, s, 0, 0, 0}; }
  static LatentSpec continuous(std::size_t d_u) { return {LatentKind::Continuous, 0, d_u, 0, 0}; }
  static LatentSpec sequential(std::size_t s, std::size_t m, std::size_t d_code) {
    return {LatentKind::Sequential, s, 0, m, d_code};
  }

  /// Width of the context vector the flow is conditioned on.
  std::size_t context_dim() const;
  /// Width of the encoder's output head.
  std::size_t encoder_outputs() const;
  /// Throws std::invalid_argument when the spec is inconsistent.
  void validate() const;

  friend bool operator==(const LatentSpec&, const LatentSpec&) = default;
};

/// Posterior probabilities from encoder logits: softmax over the last axis.
Var encode_discrete(Var logits);

struct GumbelSample {
  /// [b, s]. With hard sampling the forward value is one-hot and the gradient
  /// is that of the relaxed sample (straight-through).
  Var sample;
  std::vector<std::size_t> states;
};

/// Probabilities are floored at 1e-12 before the log, which biases
/// near-degenerate categoricals by at most that amount.
GumbelSample gumbel_softmax_sample(Var probs, double temperature, Rng& rng, bool hard = true);

/// u = mu + exp(log_sigma) * eps; log_sigma is floored at -30.
Var reparam_gaussian_sample(Var mu, Var log_sigma, Rng& rng);

/// KL(p || uniform over s states) per row; 0 log 0 is taken as 0.
Var kl_categorical_uniform(Var probs);
/// KL(N(mu, diag sigma^2) || N(0, I)) per row.
Var kl_gaussian_standard(Var mu, Var log_sigma);

struct Codebook {
  Codebook() = default;
  Codebook(std::size_t size, std::size_t code_dim, Rng& rng);

  std::size_t size() const { return vectors.value.dim(0); }
  std::size_t code_dim() const { return vectors.value.dim(1); }

  Parameter vectors;  // [s, d_code]
};

/// Nearest codebook row per input row by Euclidean distance; ties go to the lowest index.
std::vector<std::size_t> nearest_codes(const Tensor& pre_codes, const Tensor& codebook);

struct Quantized {
  std::vector<std::size_t> indices;
  /// Codebook rows in the forward pass, identity gradient to pre_codes.
  Var quantized;
  /// ||sg(pre) - code||^2 + 0.25 ||pre - sg(code)||^2 summed over rows.
  Var vq_loss;
};

inline constexpr double kCommitmentCost = 0.25;

Quantized vq_quantize(Tape& tape, Var pre_codes, Codebook& codebook);

enum class PriorKind { UniformCategorical, StandardGaussian, LearnableSequence };

/// Prior over the latent space. Only LearnableSequence has parameters: a
/// first-order autoregressive categorical over code sequences.
class PriorModel {
 public:
  static PriorModel uniform_categorical(std::size_t states);
  static PriorModel standard_gaussian(std::size_t latent_dim);
  static PriorModel learnable_sequence(std::size_t states, std::size_t length);
  /// The fixed or learnable prior that matches a latent spec (None maps to an empty categorical).
  static PriorModel for_latent(const LatentSpec& spec);

  PriorKind kind() const { return kind_; }
  bool learnable() const { return kind_ == PriorKind::LearnableSequence; }
  std::size_t states() const { return states_; }
  std::size_t latent_dim() const { return latent_dim_; }
  std::size_t length() const { return length_; }

  /// log pi(u) for categorical states, [b].
  Var log_prob_states(Tape& tape, const std::vector<std::size_t>& states) const;
  /// log density of continuous latents [b, d_u] -> [b].
  Var log_prob_gaussian(Var u) const;
  /// Sum over positions of log p(u_t | u_{t-1}) per sequence, [b].
  Var log_prob_sequences(Tape& tape, const std::vector<std::vector<std::size_t>>& codes);
  /// Value-only log mass of one code sequence.
  double log_prob_sequence(const std::vector<std::size_t>& code) const;

  std::size_t sample_state(Rng& rng) const;
  std::vector<std::size_t> sample_sequence(Rng& rng) const;

  std::vector<Parameter*> parameters();

  Parameter initial_logits;  // [s]
  Parameter transitions;     // [m, s, s]; row (t, prev) conditions position t >= 1

 private:
  PriorKind kind_ = PriorKind::UniformCategorical;
  std::size_t states_ = 0;
  std::size_t latent_dim_ = 0;
  std::size_t length_ = 0;
};

/// One-hot rows for categorical states, [b, s].
Tensor one_hot(const std::vector<std::size_t>& states, std::size_t s);

}  // namespace nvf::latent
