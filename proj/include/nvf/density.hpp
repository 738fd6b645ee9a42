// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "nvf/model.hpp"

namespace nvf::density {

using ad::Tensor;

enum class Estimator { Exact, TopK, IwBound };

const char* to_string(Estimator e);
Estimator estimator_from_string(const std::string& name);
/// exact for none/discrete, topk for sequential, iw for continuous.
Estimator default_estimator(latent::LatentKind kind);

class IncompatibleEstimator : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Throws IncompatibleEstimator naming both the estimator and the regime.
void check_estimator(latent::LatentKind kind, Estimator e);

/// Rows evaluated per tape when scoring large batches.
inline constexpr std::size_t kEvalChunk = 4096;

/// log p(x | u) per row for explicit contexts [n, context_dim].
std::vector<double> conditional_log_prob(NvfModel& model, const Tensor& x, const Tensor& context);

/// Exact marginal: logsumexp over states of log pi(u) + log p(x|u). The
/// latent-free baseline returns log p(x) directly.
std::vector<double> exact_log_density(NvfModel& model, const Tensor& x);

/// ELBO with the posterior expectation taken by enumerating every state.
std::vector<double> enumerated_elbo(NvfModel& model, const Tensor& x);

/// The K code sequences of lowest total quantization distance
/// sum_t ||pre_t - v_{c_t}||^2, cheapest first; the first is the argmax
/// quantization. pre_codes is [m, d_code].
std::vector<std::vector<std::size_t>> topk_candidates(const Tensor& pre_codes, const Tensor& codebook,
                                                      std::size_t k);

/// logsumexp over the top-K candidates of log pi(v) + log p(x|v).
std::vector<double> topk_log_density(NvfModel& model, const Tensor& x, std::size_t k);

/// Marginal over every one of the s^m code sequences (small spaces only).
std::vector<double> exact_sequence_log_density(NvfModel& model, const Tensor& x);

/// Importance-weighted lower bound log (1/K) sum_k p(x|u_k) pi(u_k) / nu(u_k|x).
std::vector<double> iw_log_density_bound(NvfModel& model, const Tensor& x, std::size_t k, Rng& rng);

/// Dispatches to the estimator after checking it against the latent regime.
std::vector<double> log_density(NvfModel& model, const Tensor& x, Estimator e, std::size_t k, Rng& rng);

/// Ancestral samples: u ~ pi, z ~ N(0, I), x = G(z, u). Returns [n, d].
Tensor sample(NvfModel& model, std::size_t n, Rng& rng);

struct DensityReport {
  std::vector<double> log_density;  // nats, original data units
  double mean_nll = 0.0;
  Estimator estimator = Estimator::Exact;
  std::size_t k = 1;
};

/// Scores standardized rows and adds log_jacobian (sum_j -ln std_j) back so
/// values are densities of the unstandardized data.
DensityReport nll_report(NvfModel& model, const Tensor& x, Estimator e, std::size_t k, double log_jacobian,
                         Rng& rng);

/// `index,logp` rows followed by `# mean_nll=<v> estimator=<tag> K=<k>`.
void write_report_csv(std::ostream& os, const DensityReport& report);

}  // namespace nvf::density
