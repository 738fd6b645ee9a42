// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "nvf/density.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>
#include <queue>

namespace nvf::density {

using latent::LatentKind;

const char* to_string(Estimator e) {
  switch (e) {
    case Estimator::Exact: return "exact";
    case Estimator::TopK: return "topk";
    case Estimator::IwBound: return "iw";
  }
  return "exact";
}

Estimator estimator_from_string(const std::string& name) {
  if (name == "exact") return Estimator::Exact;
  if (name == "topk") return Estimator::TopK;
  if (name == "iw" || name == "iw-bound") return Estimator::IwBound;
  throw std::invalid_argument("unknown estimator '" + name + "' (expected exact|topk|iw)");
}

Estimator default_estimator(LatentKind kind) {
  switch (kind) {
    case LatentKind::None:
    case LatentKind::Discrete: return Estimator::Exact;
    case LatentKind::Sequential: return Estimator::TopK;
    case LatentKind::Continuous: return Estimator::IwBound;
  }
  return Estimator::Exact;
}

void check_estimator(LatentKind kind, Estimator e) {
  if (default_estimator(kind) != e) {
    throw IncompatibleEstimator(std::string("estimator '") + to_string(e) + "' is not available for the '" +
                                latent::to_string(kind) + "' latent regime (use '" +
                                to_string(default_estimator(kind)) + "')");
  }
}

namespace {

double logsumexp(std::span<const double> v) {
  if (v.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

Tensor row_block(const Tensor& t, std::size_t begin, std::size_t end) {
  const auto w = t.last_dim();
  std::vector<double> data(t.values().begin() + static_cast<std::ptrdiff_t>(begin * w),
                           t.values().begin() + static_cast<std::ptrdiff_t>(end * w));
  return Tensor({end - begin, w}, std::move(data));
}

// Each row repeated `reps` times consecutively.
Tensor repeat_rows(const Tensor& t, std::size_t reps) {
  const auto n = t.dim(0), w = t.dim(1);
  Tensor out = Tensor::zeros({n * reps, w});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t r = 0; r < reps; ++r)
      std::copy_n(t.values().begin() + static_cast<std::ptrdiff_t>(i * w), w,
                  out.data().begin() + static_cast<std::ptrdiff_t>((i * reps + r) * w));
  return out;
}

void require_rows(NvfModel& model, const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != model.dim()) {
    throw ad::ShapeError("expected data of shape [n," + std::to_string(model.dim()) + "], got " +
                         ad::shape_string(x.shape()));
  }
}

Tensor encoder_outputs(NvfModel& model, const Tensor& x) {
  const auto n = x.dim(0);
  const auto w = model.latent().encoder_outputs();
  Tensor out = Tensor::zeros({n, w});
  for (std::size_t begin = 0; begin < n; begin += kEvalChunk) {
    const auto end = std::min(n, begin + kEvalChunk);
    ad::Tape tape;
    const auto h = model.encoder().forward(tape, tape.constant(row_block(x, begin, end)));
    std::copy(h.value().values().begin(), h.value().values().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(begin * w));
  }
  return out;
}

Tensor code_context(NvfModel& model, const std::vector<std::vector<std::size_t>>& codes) {
  const auto& book = model.codebook().vectors.value;
  const auto m = model.latent().length, dc = model.latent().code_dim;
  Tensor ctx = Tensor::zeros({codes.size(), m * dc});
  for (std::size_t i = 0; i < codes.size(); ++i)
    for (std::size_t t = 0; t < m; ++t)
      for (std::size_t j = 0; j < dc; ++j) ctx.at(i, t * dc + j) = book.at(codes[i][t], j);
  return ctx;
}

std::size_t code_space_size(std::size_t s, std::size_t m) {
  const double total = std::pow(static_cast<double>(s), static_cast<double>(m));
  if (total > 1e7) throw std::invalid_argument("code space too large to enumerate");
  return static_cast<std::size_t>(std::llround(total));
}

}  // namespace

std::vector<double> conditional_log_prob(NvfModel& model, const Tensor& x, const Tensor& context) {
  require_rows(model, x);
  const auto n = x.dim(0);
  if (context.rank() != 2 || context.dim(0) != n) throw ad::ShapeError("context rows must match data rows");
  std::vector<double> out;
  out.reserve(n);
  for (std::size_t begin = 0; begin < n; begin += kEvalChunk) {
    const auto end = std::min(n, begin + kEvalChunk);
    ad::Tape tape;
    const auto lp = model.flow().conditional_log_prob(tape, tape.constant(row_block(x, begin, end)),
                                                      tape.constant(row_block(context, begin, end)));
    out.insert(out.end(), lp.value().values().begin(), lp.value().values().end());
  }
  return out;
}

std::vector<double> exact_log_density(NvfModel& model, const Tensor& x) {
  require_rows(model, x);
  const auto kind = model.latent().kind;
  const auto n = x.dim(0);
  if (kind == LatentKind::None) return conditional_log_prob(model, x, Tensor::zeros({n, 0}));
  if (kind != LatentKind::Discrete) {
    throw IncompatibleEstimator(std::string("exact density needs a discrete latent, model is '") +
                                latent::to_string(kind) + "'");
  }
  const auto s = model.latent().states;
  std::vector<std::size_t> states(n * s);
  for (std::size_t i = 0; i < n * s; ++i) states[i] = i % s;
  const auto lp = conditional_log_prob(model, repeat_rows(x, s), latent::one_hot(states, s));

  ad::Tape tape;
  const auto log_prior = model.prior().log_prob_states(tape, states).value();
  std::vector<double> out(n), terms(s);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t u = 0; u < s; ++u) terms[u] = log_prior[i * s + u] + lp[i * s + u];
    out[i] = logsumexp(terms);
  }
  return out;
}

std::vector<double> enumerated_elbo(NvfModel& model, const Tensor& x) {
  require_rows(model, x);
  if (model.latent().kind != LatentKind::Discrete) {
    throw IncompatibleEstimator("enumerated ELBO needs a discrete latent");
  }
  const auto n = x.dim(0);
  const auto s = model.latent().states;
  const Tensor logits = encoder_outputs(model, x);
  std::vector<std::size_t> states(n * s);
  for (std::size_t i = 0; i < n * s; ++i) states[i] = i % s;
  const auto lp = conditional_log_prob(model, repeat_rows(x, s), latent::one_hot(states, s));

  ad::Tape tape;
  const Tensor probs = latent::encode_discrete(tape.constant(logits)).value();
  const auto log_prior = model.prior().log_prob_states(tape, states).value();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double expected = 0.0, kl = 0.0;
    for (std::size_t u = 0; u < s; ++u) {
      const double p = probs.at(i, u);
      if (p == 0.0) continue;
      expected += p * lp[i * s + u];
      kl += p * (std::log(p) - log_prior[i * s + u]);
    }
    out[i] = expected - kl;
  }
  return out;
}

std::vector<std::vector<std::size_t>> topk_candidates(const Tensor& pre_codes, const Tensor& codebook,
                                                      std::size_t k) {
  const auto m = pre_codes.dim(0), dc = pre_codes.dim(1), s = codebook.dim(0);
  if (codebook.dim(1) != dc) throw ad::ShapeError("topk_candidates: code dimension mismatch");
  if (k == 0) throw std::invalid_argument("topk: K must be at least 1");
  const double space = std::pow(static_cast<double>(s), static_cast<double>(m));
  if (static_cast<double>(k) > space) {
    throw std::invalid_argument("topk: K=" + std::to_string(k) + " exceeds the " +
                                std::to_string(static_cast<long long>(space)) + " enumerable candidates");
  }

  // Per position: codes ordered by distance, lowest index first on ties.
  std::vector<std::vector<std::pair<double, std::size_t>>> ranked(m);
  for (std::size_t t = 0; t < m; ++t) {
    for (std::size_t c = 0; c < s; ++c) {
      double dist = 0.0;
      for (std::size_t j = 0; j < dc; ++j) {
        const double diff = pre_codes.at(t, j) - codebook.at(c, j);
        dist += diff * diff;
      }
      ranked[t].emplace_back(dist, c);
    }
    std::sort(ranked[t].begin(), ranked[t].end());
  }

  // Best-first over rank tuples. Each tuple's parent decrements its last
  // nonzero rank, so children only bump positions at or after that one.
  struct Entry {
    double cost;
    std::vector<std::size_t> ranks;
    std::size_t pivot;
  };
  auto worse = [](const Entry& a, const Entry& b) {
    if (a.cost != b.cost) return a.cost > b.cost;
    return a.ranks > b.ranks;
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> heap(worse);
  Entry root{0.0, std::vector<std::size_t>(m, 0), 0};
  for (std::size_t t = 0; t < m; ++t) root.cost += ranked[t][0].first;
  heap.push(std::move(root));

  std::vector<std::vector<std::size_t>> out;
  while (out.size() < k && !heap.empty()) {
    Entry e = heap.top();
    heap.pop();
    std::vector<std::size_t> code(m);
    for (std::size_t t = 0; t < m; ++t) code[t] = ranked[t][e.ranks[t]].second;
    out.push_back(std::move(code));
    for (std::size_t t = e.pivot; t < m; ++t) {
      if (e.ranks[t] + 1 >= s) continue;
      Entry child = e;
      child.cost += ranked[t][e.ranks[t] + 1].first - ranked[t][e.ranks[t]].first;
      ++child.ranks[t];
      child.pivot = t;
      heap.push(std::move(child));
    }
  }
  return out;
}

namespace {

// logsumexp over each row's candidate list of log pi(v) + log p(x|v).
std::vector<double> sequence_mixture(NvfModel& model, const Tensor& x,
                                     const std::vector<std::vector<std::vector<std::size_t>>>& candidates) {
  const auto n = x.dim(0);
  std::vector<std::vector<std::size_t>> flat;
  std::vector<std::size_t> owner;
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& c : candidates[i]) {
      flat.push_back(c);
      owner.push_back(i);
    }
  Tensor xs = Tensor::zeros({flat.size(), model.dim()});
  for (std::size_t r = 0; r < flat.size(); ++r)
    for (std::size_t j = 0; j < model.dim(); ++j) xs.at(r, j) = x.at(owner[r], j);
  const auto lp = conditional_log_prob(model, xs, code_context(model, flat));

  std::vector<double> out(n);
  std::size_t r = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> terms;
    for (std::size_t c = 0; c < candidates[i].size(); ++c, ++r) {
      terms.push_back(model.prior().log_prob_sequence(flat[r]) + lp[r]);
    }
    out[i] = logsumexp(terms);
  }
  return out;
}

void require_sequential(NvfModel& model, const char* what) {
  if (model.latent().kind != LatentKind::Sequential) {
    throw IncompatibleEstimator(std::string(what) + " needs a sequential latent, model is '" +
                                latent::to_string(model.latent().kind) + "'");
  }
}

}  // namespace

std::vector<double> topk_log_density(NvfModel& model, const Tensor& x, std::size_t k) {
  require_rows(model, x);
  require_sequential(model, "top-K density");
  const auto n = x.dim(0);
  const auto m = model.latent().length, dc = model.latent().code_dim;
  const Tensor pre = encoder_outputs(model, x);
  std::vector<std::vector<std::vector<std::size_t>>> candidates(n);
  for (std::size_t i = 0; i < n; ++i) {
    candidates[i] = topk_candidates(row_block(pre, i, i + 1).reshaped({m, dc}), model.codebook().vectors.value, k);
  }
  return sequence_mixture(model, x, candidates);
}

std::vector<double> exact_sequence_log_density(NvfModel& model, const Tensor& x) {
  require_rows(model, x);
  require_sequential(model, "sequence enumeration");
  const auto s = model.latent().states, m = model.latent().length;
  const auto total = code_space_size(s, m);
  std::vector<std::vector<std::size_t>> all(total, std::vector<std::size_t>(m));
  for (std::size_t i = 0; i < total; ++i) {
    std::size_t rest = i;
    for (std::size_t t = m; t-- > 0;) {
      all[i][t] = rest % s;
      rest /= s;
    }
  }
  std::vector<std::vector<std::vector<std::size_t>>> candidates(x.dim(0), all);
  return sequence_mixture(model, x, candidates);
}

std::vector<double> iw_log_density_bound(NvfModel& model, const Tensor& x, std::size_t k, Rng& rng) {
  require_rows(model, x);
  if (model.latent().kind != LatentKind::Continuous) {
    throw IncompatibleEstimator(std::string("importance-weighted bound needs a continuous latent, model is '") +
                                latent::to_string(model.latent().kind) + "'");
  }
  if (k == 0) throw std::invalid_argument("iw bound: K must be at least 1");
  const auto n = x.dim(0), du = model.latent().latent_dim;
  const Tensor head = encoder_outputs(model, x);
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);

  Tensor u = Tensor::zeros({n * k, du});
  std::vector<double> log_ratio(n * k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < du; ++j) {
      if (head.at(i, du + j) < -30.0) {
        throw ad::NumericError("iw bound: posterior scale underflow at row " + std::to_string(i));
      }
    }
    for (std::size_t r = 0; r < k; ++r) {
      double lr = 0.0;
      for (std::size_t j = 0; j < du; ++j) {
        const double mu = head.at(i, j), ls = head.at(i, du + j);
        const double eps = rng.normal();
        const double val = mu + std::exp(ls) * eps;
        u.at(i * k + r, j) = val;
        const double log_prior = -0.5 * val * val - half_log_2pi;
        const double log_post = -0.5 * eps * eps - half_log_2pi - ls;
        lr += log_prior - log_post;
      }
      log_ratio[i * k + r] = lr;
    }
  }
  const auto lp = conditional_log_prob(model, repeat_rows(x, k), u);
  std::vector<double> out(n), terms(k);
  const double log_k = std::log(static_cast<double>(k));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < k; ++r) terms[r] = lp[i * k + r] + log_ratio[i * k + r];
    out[i] = logsumexp(terms) - log_k;
  }
  return out;
}

std::vector<double> log_density(NvfModel& model, const Tensor& x, Estimator e, std::size_t k, Rng& rng) {
  check_estimator(model.latent().kind, e);
  switch (e) {
    case Estimator::Exact: return exact_log_density(model, x);
    case Estimator::TopK: return topk_log_density(model, x, k);
    case Estimator::IwBound: return iw_log_density_bound(model, x, k, rng);
  }
  return {};
}

Tensor sample(NvfModel& model, std::size_t n, Rng& rng) {
  const auto d = model.dim();
  const auto& spec = model.latent();
  const auto c = spec.context_dim();
  Tensor z = Tensor::zeros({n, d});
  Tensor ctx = Tensor::zeros({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    switch (spec.kind) {
      case LatentKind::None:
        break;
      case LatentKind::Discrete:
        ctx.at(i, model.prior().sample_state(rng)) = 1.0;
        break;
      case LatentKind::Continuous:
        for (std::size_t j = 0; j < c; ++j) ctx.at(i, j) = rng.normal();
        break;
      case LatentKind::Sequential: {
        const auto code = model.prior().sample_sequence(rng);
        const Tensor row = code_context(model, {code});
        for (std::size_t j = 0; j < c; ++j) ctx.at(i, j) = row[j];
        break;
      }
    }
    for (std::size_t j = 0; j < d; ++j) z.at(i, j) = rng.normal();
  }
  Tensor out = Tensor::zeros({n, d});
  for (std::size_t begin = 0; begin < n; begin += kEvalChunk) {
    const auto end = std::min(n, begin + kEvalChunk);
    ad::Tape tape;
    const auto x = model.flow().forward(tape, tape.constant(row_block(z, begin, end)),
                                        tape.constant(row_block(ctx, begin, end)));
    std::copy(x.value.value().values().begin(), x.value.value().values().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(begin * d));
  }
  return out;
}

DensityReport nll_report(NvfModel& model, const Tensor& x, Estimator e, std::size_t k, double log_jacobian,
                         Rng& rng) {
  if (x.rank() != 2 || x.dim(0) == 0) throw std::invalid_argument("nll_report: empty dataset");
  DensityReport report;
  report.estimator = e;
  report.k = k;
  report.log_density = log_density(model, x, e, k, rng);
  double total = 0.0;
  for (auto& v : report.log_density) {
    v += log_jacobian;
    total += v;
  }
  report.mean_nll = -total / static_cast<double>(report.log_density.size());
  return report;
}

void write_report_csv(std::ostream& os, const DensityReport& report) {
  char buf[64];
  os << "index,logp\n";
  for (std::size_t i = 0; i < report.log_density.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", report.log_density[i]);
    os << i << ',' << buf << '\n';
  }
  std::snprintf(buf, sizeof buf, "%.17g", report.mean_nll);
  os << "# mean_nll=" << buf << " estimator=" << to_string(report.estimator) << " K=" << report.k << '\n';
}

}  // namespace nvf::density
