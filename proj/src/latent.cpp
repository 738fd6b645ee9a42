// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "nvf/latent.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace nvf::latent {

const char* to_string(LatentKind kind) {
  switch (kind) {
    case LatentKind::None: return "none";
    case LatentKind::Discrete: return "discrete";
    case LatentKind::Continuous: return "continuous";
    case LatentKind::Sequential: return "sequential";
  }
  return "none";
}

LatentKind latent_kind_from_string(const std::string& name) {
  if (name == "none") return LatentKind::None;
  if (name == "discrete") return LatentKind::Discrete;
  if (name == "continuous") return LatentKind::Continuous;
  if (name == "sequential") return LatentKind::Sequential;
  throw std::invalid_argument("unknown latent regime '" + name + "' (expected none|discrete|continuous|sequential)");
}

std::size_t LatentSpec::context_dim() const {
  switch (kind) {
    case LatentKind::None: return 0;
    case LatentKind::Discrete: return states;
    case LatentKind::Continuous: return latent_dim;
    case LatentKind::Sequential: return length * code_dim;
  }
  return 0;
}

std::size_t LatentSpec::encoder_outputs() const {
  switch (kind) {
    case LatentKind::None: return 0;
    case LatentKind::Discrete: return states;
    case LatentKind::Continuous: return 2 * latent_dim;
    case LatentKind::Sequential: return length * code_dim;
  }
  return 0;
}

void LatentSpec::validate() const {
  switch (kind) {
    case LatentKind::None:
      return;
    case LatentKind::Discrete:
      if (states < 2) throw std::invalid_argument("discrete latent needs at least 2 states");
      return;
    case LatentKind::Continuous:
      if (latent_dim < 1) throw std::invalid_argument("continuous latent needs latent_dim >= 1");
      return;
    case LatentKind::Sequential:
      if (states < 2) throw std::invalid_argument("sequential latent needs a codebook of at least 2 codes");
      if (length < 1) throw std::invalid_argument("sequential latent needs length >= 1");
      if (code_dim < 1) throw std::invalid_argument("sequential latent needs code_dim >= 1");
      return;
  }
}

Tensor one_hot(const std::vector<std::size_t>& states, std::size_t s) {
  Tensor t = Tensor::zeros({states.size(), s});
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (states[i] >= s) throw std::out_of_range("state index " + std::to_string(states[i]) + " out of range");
    t.at(i, states[i]) = 1.0;
  }
  return t;
}

Var encode_discrete(Var logits) { return ad::softmax(logits); }

GumbelSample gumbel_softmax_sample(Var probs, double temperature, Rng& rng, bool hard) {
  if (!(temperature > 0.0)) throw std::invalid_argument("gumbel_softmax_sample: temperature must be positive");
  Tape& tape = *probs.tape;
  const Tensor& p = probs.value();
  const auto s = p.last_dim();
  const auto rows = p.outer_size();

  Tensor noise = Tensor::zeros(p.shape());
  for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = rng.gumbel();

  const Var logp = ad::log(ad::clamp(probs, 1e-12, 1.0));
  const Var soft = ad::softmax(ad::scale(logp + tape.constant(noise), 1.0 / temperature));

  GumbelSample out{soft, std::vector<std::size_t>(rows)};
  const Tensor& y = soft.value();
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < s; ++c)
      if (y[r * s + c] > y[r * s + best]) best = c;
    out.states[r] = best;
  }
  if (hard) out.sample = ad::straight_through(soft, one_hot(out.states, s).reshaped(p.shape()));
  return out;
}

Var reparam_gaussian_sample(Var mu, Var log_sigma, Rng& rng) {
  Tensor eps = Tensor::zeros(mu.shape());
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = rng.normal();
  const Var sigma = ad::exp(ad::clamp(log_sigma, -30.0));
  return mu + sigma * mu.tape->constant(std::move(eps));
}

Var kl_categorical_uniform(Var probs) {
  const double log_s = std::log(static_cast<double>(probs.value().last_dim()));
  const Var logp = ad::log(ad::clamp(probs, std::numeric_limits<double>::min(), 1.0));
  return ad::sum_last(probs * ad::add_scalar(logp, log_s));
}

Var kl_gaussian_standard(Var mu, Var log_sigma) {
  const Var var = ad::exp(ad::scale(log_sigma, 2.0));
  const Var terms = mu * mu + var - ad::scale(log_sigma, 2.0);
  return ad::scale(ad::add_scalar(ad::sum_last(terms), -static_cast<double>(mu.value().last_dim())), 0.5);
}

// ---------------------------------------------------------------------------

Codebook::Codebook(std::size_t size, std::size_t code_dim, Rng& rng) {
  Tensor v = Tensor::zeros({size, code_dim});
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = rng.uniform(-1.0, 1.0);
  vectors = Parameter("codebook.vectors", std::move(v));
}

std::vector<std::size_t> nearest_codes(const Tensor& pre, const Tensor& codebook) {
  const auto dc = codebook.dim(1);
  if (pre.last_dim() != dc) throw ad::ShapeError("nearest_codes: code dimension mismatch");
  const auto n = pre.outer_size();
  std::vector<std::size_t> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < codebook.dim(0); ++k) {
      double dist = 0.0;
      for (std::size_t j = 0; j < dc; ++j) {
        const double diff = pre[r * dc + j] - codebook.at(k, j);
        dist += diff * diff;
      }
      if (dist < best) {
        best = dist;
        out[r] = k;
      }
    }
  }
  return out;
}

Quantized vq_quantize(Tape& tape, Var pre_codes, Codebook& codebook) {
  const Var book = tape.param(codebook.vectors);
  Quantized out;
  out.indices = nearest_codes(pre_codes.value(), codebook.vectors.value);
  const Var codes = ad::gather_rows(book, out.indices);

  const Tensor& pre = pre_codes.value();
  out.quantized = ad::straight_through(pre_codes, codes.value());

  const Var gap = ad::sub(tape.constant(pre), codes);
  const Var codebook_term = ad::sum(gap * gap);
  const Var commit = ad::sub(pre_codes, tape.constant(codes.value()));
  out.vq_loss = codebook_term + ad::scale(ad::sum(commit * commit), kCommitmentCost);
  return out;
}

// ---------------------------------------------------------------------------

PriorModel PriorModel::uniform_categorical(std::size_t states) {
  PriorModel p;
  p.kind_ = PriorKind::UniformCategorical;
  p.states_ = states;
  return p;
}

PriorModel PriorModel::standard_gaussian(std::size_t latent_dim) {
  PriorModel p;
  p.kind_ = PriorKind::StandardGaussian;
  p.latent_dim_ = latent_dim;
  return p;
}

PriorModel PriorModel::learnable_sequence(std::size_t states, std::size_t length) {
  PriorModel p;
  p.kind_ = PriorKind::LearnableSequence;
  p.states_ = states;
  p.length_ = length;
  p.initial_logits = Parameter("prior.initial_logits", Tensor::zeros({states}));
  p.transitions = Parameter("prior.transitions", Tensor::zeros({length, states, states}));
  return p;
}

PriorModel PriorModel::for_latent(const LatentSpec& spec) {
  switch (spec.kind) {
    case LatentKind::None: return uniform_categorical(1);
    case LatentKind::Discrete: return uniform_categorical(spec.states);
    case LatentKind::Continuous: return standard_gaussian(spec.latent_dim);
    case LatentKind::Sequential: return learnable_sequence(spec.states, spec.length);
  }
  return uniform_categorical(1);
}

Var PriorModel::log_prob_states(Tape& tape, const std::vector<std::size_t>& states) const {
  if (kind_ != PriorKind::UniformCategorical) throw std::logic_error("log_prob_states needs a categorical prior");
  for (auto s : states)
    if (s >= states_) throw std::out_of_range("state index " + std::to_string(s) + " out of range");
  return tape.constant(Tensor::full({states.size()}, -std::log(static_cast<double>(states_))));
}

Var PriorModel::log_prob_gaussian(Var u) const {
  if (kind_ != PriorKind::StandardGaussian) throw std::logic_error("log_prob_gaussian needs a Gaussian prior");
  if (u.value().last_dim() != latent_dim_) throw ad::ShapeError("log_prob_gaussian: latent dimension mismatch");
  const double log_norm = -0.5 * static_cast<double>(latent_dim_) * std::log(2.0 * std::numbers::pi);
  return ad::add_scalar(ad::scale(ad::sum_last(u * u), -0.5), log_norm);
}

Var PriorModel::log_prob_sequences(Tape& tape, const std::vector<std::vector<std::size_t>>& codes) {
  if (kind_ != PriorKind::LearnableSequence) throw std::logic_error("log_prob_sequences needs a sequence prior");
  const auto b = codes.size();
  const auto s = states_, m = length_;
  std::vector<std::size_t> first(b), follow_rows, follow_states;
  follow_rows.reserve(b * (m - 1));
  follow_states.reserve(b * (m - 1));
  for (std::size_t i = 0; i < b; ++i) {
    if (codes[i].size() != m) throw std::out_of_range("code sequence length mismatch");
    for (auto c : codes[i])
      if (c >= s) throw std::out_of_range("code index " + std::to_string(c) + " out of range");
    first[i] = codes[i][0];
    for (std::size_t t = 1; t < m; ++t) {
      follow_rows.push_back(t * s + codes[i][t - 1]);
      follow_states.push_back(codes[i][t]);
    }
  }
  const Var init = ad::reshape(tape.param(initial_logits), {1, s});
  const Var head = ad::log_softmax(ad::gather_rows(init, std::vector<std::size_t>(b, 0)));
  Var total = ad::sum_last(head * tape.constant(one_hot(first, s)));
  if (m > 1) {
    const Var table = ad::reshape(tape.param(transitions), {m * s, s});
    const Var rows = ad::log_softmax(ad::gather_rows(table, follow_rows));
    const Var picked = ad::sum_last(rows * tape.constant(one_hot(follow_states, s)));
    total = total + ad::sum_last(ad::reshape(picked, {b, m - 1}));
  }
  return total;
}

namespace {

double log_softmax_at(std::span<const double> logits, std::size_t k) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  return logits[k] - mx - std::log(z);
}

std::size_t sample_categorical(std::span<const double> logits, Rng& rng) {
  // Gumbel-max
  std::size_t best = 0;
  double best_v = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const double v = logits[k] + rng.gumbel();
    if (v > best_v) {
      best_v = v;
      best = k;
    }
  }
  return best;
}

}  // namespace

double PriorModel::log_prob_sequence(const std::vector<std::size_t>& code) const {
  if (kind_ != PriorKind::LearnableSequence) throw std::logic_error("log_prob_sequence needs a sequence prior");
  if (code.size() != length_) throw std::out_of_range("code sequence length mismatch");
  const auto s = states_;
  for (auto c : code)
    if (c >= s) throw std::out_of_range("code index " + std::to_string(c) + " out of range");
  double lp = log_softmax_at(initial_logits.value.data(), code[0]);
  for (std::size_t t = 1; t < length_; ++t) {
    lp += log_softmax_at(transitions.value.data().subspan((t * s + code[t - 1]) * s, s), code[t]);
  }
  return lp;
}

std::size_t PriorModel::sample_state(Rng& rng) const {
  if (kind_ != PriorKind::UniformCategorical) throw std::logic_error("sample_state needs a categorical prior");
  return rng.index(states_);
}

std::vector<std::size_t> PriorModel::sample_sequence(Rng& rng) const {
  if (kind_ != PriorKind::LearnableSequence) throw std::logic_error("sample_sequence needs a sequence prior");
  const auto s = states_;
  std::vector<std::size_t> code(length_);
  code[0] = sample_categorical(initial_logits.value.data(), rng);
  for (std::size_t t = 1; t < length_; ++t)
    code[t] = sample_categorical(transitions.value.data().subspan((t * s + code[t - 1]) * s, s), rng);
  return code;
}

std::vector<Parameter*> PriorModel::parameters() {
  if (!learnable()) return {};
  return {&initial_logits, &transitions};
}

}  // namespace nvf::latent
