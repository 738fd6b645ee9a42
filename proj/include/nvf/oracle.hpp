// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <optional>
#include <vector>

namespace nvf::oracle {

/// One-dimensional Gaussian mixture.
struct GmmSpec {
  std::vector<double> weights;
  std::vector<double> means;
  std::vector<double> scales;

  static GmmSpec single(double mean, double scale) { return {{1.0}, {mean}, {scale}}; }
  /// Equal-weight N(-mu, sigma^2) and N(mu, sigma^2).
  static GmmSpec symmetric(double mu, double sigma) { return {{0.5, 0.5}, {-mu, mu}, {sigma, sigma}}; }

  /// Throws std::invalid_argument unless weights form a simplex and scales are positive.
  void validate() const;
  GmmSpec shifted(double offset) const;
};

double normal_cdf(double z);
double normal_log_pdf(double z);

double gmm_pdf(const GmmSpec& spec, double x);
double gmm_log_pdf(const GmmSpec& spec, double x);
double gmm_cdf(const GmmSpec& spec, double x);

/// Inverse CDF by bisection to full double precision. Requires p in (0, 1).
double gmm_quantile(const GmmSpec& spec, double p);

/// Monotone transport target_quantile(source_cdf(z)).
double transport_map(const GmmSpec& source, const GmmSpec& target, double z);

struct TransportJacobian {
  double log_value = 0.0;
  /// Empty when exp(log_value) over- or underflows a double.
  std::optional<double> direct;
};

/// dG/dz = source_pdf(z) / target_pdf(G(z)), with the log form computed from log densities.
TransportJacobian transport_jacobian(const GmmSpec& source, const GmmSpec& target, double z);

/// Closed forms for |dG/dz| at z = 0 in the symmetric two-mode example:
/// case 1 maps N(0, 1), case 2 maps the mixture of N(+-mu/2, sigma^2).
double example1_log_jacobian(int which, double mu, double sigma);
/// Source distribution of the example's case.
GmmSpec example1_source(int which, double mu, double sigma);

/// Differential entropy -int p ln p, the NLL floor of a perfect model.
double gmm_true_nll(const GmmSpec& spec, double tol = 1e-6);

/// Isotropic two-dimensional mixture log density.
double gmm2d_log_pdf(const std::vector<std::array<double, 2>>& centers, const std::vector<double>& weights,
                     double sigma, double x, double y);

}  // namespace nvf::oracle
