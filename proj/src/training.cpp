// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "nvf/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>

#include "nvf/density.hpp"

namespace nvf::training {

using latent::LatentKind;

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  if (k < 1) throw std::invalid_argument("K must be at least 1");
  if (!(tau_start > 0.0) || !(tau_end > 0.0)) throw std::invalid_argument("temperatures must be positive");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be positive");
  if (eval_every < 1) throw std::invalid_argument("eval_every must be at least 1");
  if (!(prior_lr_scale > 0.0)) throw std::invalid_argument("prior_lr_scale must be positive");
  if (!(kl_warmup >= 0.0 && kl_warmup <= 1.0)) throw std::invalid_argument("kl_warmup must lie in [0, 1]");
}

bool adam_step(std::span<Parameter* const> params, AdamState& state, double lr) {
  for (const auto* p : params) {
    if (!p->grad.all_finite()) {
      ++state.skipped;
      return false;
    }
  }
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto* p : params) {
      state.m.push_back(Tensor::zeros(p->value.shape()));
      state.v.push_back(Tensor::zeros(p->value.shape()));
    }
  }
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(AdamState::kBeta1, t);
  const double c2 = 1.0 - std::pow(AdamState::kBeta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = AdamState::kBeta1 * m[i] + (1.0 - AdamState::kBeta1) * g;
      v[i] = AdamState::kBeta2 * v[i] + (1.0 - AdamState::kBeta2) * g * g;
      p.value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + AdamState::kEps);
    }
  }
  return true;
}

double cosine_lr(std::size_t step, std::size_t total, double lr_max) {
  if (total == 0) return lr_max;
  const double frac = static_cast<double>(std::min(step, total)) / static_cast<double>(total);
  return lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

double gumbel_temperature(std::size_t step, std::size_t total, double tau_start, double tau_end) {
  const double half = 0.5 * static_cast<double>(total);
  if (half <= 0.0 || static_cast<double>(step) >= half) return tau_end;
  return tau_start + (tau_end - tau_start) * static_cast<double>(step) / half;
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : params)
    for (double g : p->grad.values()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && std::isfinite(norm)) {
    const double factor = max_norm / norm;
    for (auto* p : params)
      for (auto& g : p->grad.data()) g *= factor;
  }
  return norm;
}

namespace {

// [b, w] -> [K*b, w], the batch stacked K times.
Var stack_copies(Var v, std::size_t k) {
  if (k == 1) return v;
  const auto& s = v.shape();
  return ad::reshape(ad::broadcast(v, k), {k * s[0], s[1]});
}

void require_finite_rows(const Tensor& lp) {
  for (std::size_t i = 0; i < lp.size(); ++i) {
    if (!std::isfinite(lp[i])) {
      throw ad::NumericError("non-finite log-likelihood at sample " + std::to_string(i));
    }
  }
}

}  // namespace

const char* to_string(DiscreteGradient g) { return g == DiscreteGradient::Enumerate ? "enumerate" : "gumbel"; }

DiscreteGradient discrete_gradient_from_string(const std::string& name) {
  if (name == "enumerate") return DiscreteGradient::Enumerate;
  if (name == "gumbel") return DiscreteGradient::Gumbel;
  throw std::invalid_argument("unknown discrete gradient '" + name + "' (expected enumerate or gumbel)");
}

ElboTerms elbo_terms(NvfModel& model, Tape& tape, const Tensor& x, std::size_t k, double temperature, Rng& rng,
                     DiscreteGradient discrete) {
  if (k < 1) throw std::invalid_argument("K must be at least 1");
  const auto b = x.dim(0);
  const Var xv = tape.constant(x);
  const auto kind = model.latent().kind;

  if (kind == LatentKind::None) {
    const Var lp = model.flow().conditional_log_prob(tape, xv, flow::empty_context(tape, b));
    require_finite_rows(lp.value());
    return {ad::neg(ad::mean(lp)), tape.constant(Tensor::scalar(0.0))};
  }
  if (kind == LatentKind::Sequential) {
    throw std::logic_error("elbo_loss needs a fixed prior; sequential latents train with reduced_loss_theta_phi");
  }

  const Var head = model.encoder().forward(tape, xv);
  const double inv_b = 1.0 / static_cast<double>(b);
  if (kind == LatentKind::Discrete && discrete == DiscreteGradient::Enumerate) {
    const auto s = model.latent().states;
    const Var probs = latent::encode_discrete(head);
    std::vector<std::size_t> states(s * b);
    for (std::size_t i = 0; i < states.size(); ++i) states[i] = i / b;
    const Var lp_all = model.flow().conditional_log_prob(tape, stack_copies(xv, s),
                                                         tape.constant(latent::one_hot(states, s)));
    require_finite_rows(lp_all.value());
    const Var lp = ad::transpose(ad::reshape(lp_all, {s, b}));  // [b, s]
    const Var kl = latent::kl_categorical_uniform(probs);
    return {ad::scale(ad::sum(probs * lp), -inv_b), ad::scale(ad::sum(kl), inv_b)};
  }
  const Var xs = stack_copies(xv, k);
  Var lp, kl;
  if (kind == LatentKind::Discrete) {
    const Var probs = latent::encode_discrete(head);
    const auto u = latent::gumbel_softmax_sample(stack_copies(probs, k), temperature, rng, /*hard=*/true);
    lp = model.flow().conditional_log_prob(tape, xs, u.sample);
    kl = latent::kl_categorical_uniform(probs);
  } else {
    const auto du = model.latent().latent_dim;
    const Var mu = ad::slice(head, 0, du);
    const Var log_sigma = ad::slice(head, du, 2 * du);
    const Var u = latent::reparam_gaussian_sample(stack_copies(mu, k), stack_copies(log_sigma, k), rng);
    lp = model.flow().conditional_log_prob(tape, xs, u);
    kl = latent::kl_gaussian_standard(mu, log_sigma);
  }
  require_finite_rows(lp.value());
  return {ad::scale(ad::sum(lp), -inv_b / static_cast<double>(k)), ad::scale(ad::sum(kl), inv_b)};
}

Var elbo_loss(NvfModel& model, Tape& tape, const Tensor& x, std::size_t k, double temperature, Rng& rng,
              DiscreteGradient discrete) {
  const auto t = elbo_terms(model, tape, x, k, temperature, rng, discrete);
  return t.nll + t.kl;
}

double kl_weight(std::size_t step, std::size_t total, double warmup) {
  const double span = warmup * static_cast<double>(total);
  if (span <= 0.0 || static_cast<double>(step) >= span) return 1.0;
  return static_cast<double>(step) / span;
}

ReducedLoss reduced_loss_theta_phi(NvfModel& model, Tape& tape, const Tensor& x, std::size_t k) {
  if (k < 1) throw std::invalid_argument("K must be at least 1");
  if (model.latent().kind != LatentKind::Sequential) {
    throw std::logic_error("reduced_loss_theta_phi needs a sequential latent with a learnable prior");
  }
  const auto b = x.dim(0);
  const auto m = model.latent().length, dc = model.latent().code_dim;
  const Var xv = tape.constant(x);
  const Var pre = ad::reshape(model.encoder().forward(tape, xv), {b * m, dc});
  auto q = latent::vq_quantize(tape, pre, model.codebook());
  const Var ctx = ad::reshape(q.quantized, {b, m * dc});
  const Var lp = model.flow().conditional_log_prob(tape, xv, ctx);
  require_finite_rows(lp.value());

  ReducedLoss out;
  const double inv_b = 1.0 / static_cast<double>(b);
  out.loss = ad::neg(ad::mean(lp)) + ad::scale(q.vq_loss, inv_b);
  out.codes.resize(b);
  for (std::size_t i = 0; i < b; ++i) {
    out.codes[i].assign(q.indices.begin() + static_cast<std::ptrdiff_t>(i * m),
                        q.indices.begin() + static_cast<std::ptrdiff_t>((i + 1) * m));
  }
  return out;
}

Var prior_loss_beta(latent::PriorModel& prior, Tape& tape, const std::vector<std::vector<std::size_t>>& codes) {
  if (codes.empty()) throw std::invalid_argument("prior_loss_beta: no codes");
  return ad::neg(ad::mean(prior.log_prob_sequences(tape, codes)));
}

double validation_nll(NvfModel& model, const Tensor& x) {
  Rng rng(0);
  std::vector<double> lp;
  switch (model.latent().kind) {
    case LatentKind::None:
    case LatentKind::Discrete: lp = density::exact_log_density(model, x); break;
    case LatentKind::Sequential: lp = density::topk_log_density(model, x, 1); break;
    case LatentKind::Continuous: lp = density::iw_log_density_bound(model, x, 16, rng); break;
  }
  double total = 0.0;
  for (double v : lp) total += v;
  return -total / static_cast<double>(lp.size());
}

TrainResult train(NvfModel& model, const TrainConfig& config, const Tensor& train_x, const Tensor& val_x,
                  Rng& rng) {
  config.validate();
  if (train_x.rank() != 2 || train_x.dim(1) != model.dim() || train_x.dim(0) == 0) {
    throw std::invalid_argument("train: training data must be a non-empty [n," + std::to_string(model.dim()) +
                                "] matrix");
  }
  constexpr std::size_t kMaxConsecutiveFailures = 10;
  const bool learnable = model.prior().learnable();
  const auto theta_phi = model.theta_phi_parameters();
  const auto beta = model.beta_parameters();
  const auto n = train_x.dim(0), d = train_x.dim(1);
  const bool has_val = val_x.rank() == 2 && val_x.dim(0) > 0;

  TrainResult result;
  result.best_val_nll = std::numeric_limits<double>::infinity();
  AdamState adam_theta_phi, adam_beta;
  std::vector<Tensor> best;
  std::size_t consecutive_failures = 0;

  for (std::size_t step = 0; step < config.steps; ++step) {
    const double lr = cosine_lr(step, config.steps, config.learning_rate);
    const double tau = gumbel_temperature(step, config.steps, config.tau_start, config.tau_end);

    Tensor batch = Tensor::zeros({config.batch_size, d});
    for (std::size_t i = 0; i < config.batch_size; ++i) {
      const auto row = rng.index(n);
      for (std::size_t j = 0; j < d; ++j) batch.at(i, j) = train_x.at(row, j);
    }

    for (auto* p : model.parameters()) p->zero_grad();
    double loss_value = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::vector<std::size_t>> codes;
    bool ok = true;
    try {
      Tape tape;
      Var loss;
      if (learnable) {
        auto reduced = reduced_loss_theta_phi(model, tape, batch, config.k);
        loss = reduced.loss;
        codes = std::move(reduced.codes);
      } else {
        const auto terms = elbo_terms(model, tape, batch, config.k, tau, rng, config.discrete_gradient);
        const double beta = kl_weight(step, config.steps, config.kl_warmup);
        loss = beta == 1.0 ? terms.nll + terms.kl : terms.nll + ad::scale(terms.kl, beta);
        loss_value = terms.nll.value().item() + terms.kl.value().item();
      }
      if (learnable) loss_value = loss.value().item();
      tape.backward(loss);
    } catch (const ad::NumericError&) {
      ok = false;
    }
    if (ok) {
      clip_grad_norm(theta_phi, config.clip_norm);
      ok = adam_step(theta_phi, adam_theta_phi, lr);
    }
    if (ok && learnable) {
      Tape tape;
      tape.backward(prior_loss_beta(model.prior(), tape, codes));
      adam_step(beta, adam_beta, lr * config.prior_lr_scale);
    }

    if (!ok) {
      ++result.skipped_steps;
      if (++consecutive_failures >= kMaxConsecutiveFailures) {
        throw TrainingAborted("training aborted: non-finite loss for " + std::to_string(consecutive_failures) +
                              " consecutive steps (last at step " + std::to_string(step) + ")");
      }
    } else {
      consecutive_failures = 0;
    }

    MetricRow row{step, loss_value, lr, std::nullopt};
    const bool eval_now = (step + 1) % config.eval_every == 0 || step + 1 == config.steps;
    if (has_val && eval_now) {
      const double v = validation_nll(model, val_x);
      row.val_nll = v;
      if (v < result.best_val_nll) {
        result.best_val_nll = v;
        result.best_step = step + 1;
        best = model.snapshot();
      }
    }
    result.metrics.push_back(row);
  }
  if (!best.empty()) model.restore(best);
  if (config.steps == 0 && has_val) result.best_val_nll = validation_nll(model, val_x);
  return result;
}

void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& metrics) {
  char buf[64];
  os << "step,loss,lr,val_nll\n";
  for (const auto& r : metrics) {
    os << r.step << ',';
    std::snprintf(buf, sizeof buf, "%.17g", r.loss);
    os << buf << ',';
    std::snprintf(buf, sizeof buf, "%.17g", r.lr);
    os << buf << ',';
    if (r.val_nll) {
      std::snprintf(buf, sizeof buf, "%.17g", *r.val_nll);
      os << buf;
    }
    os << '\n';
  }
}

}  // namespace nvf::training
