// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "nvf/oracle.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace nvf::oracle {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double logsumexp(const std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

double upper_tail(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

// log P(Z > z) for z >= 0; the asymptotic series takes over where erfc underflows.
double log_upper_tail(double z) {
  if (z < 30.0) return std::log(upper_tail(z));
  const double r = 1.0 / (z * z);
  return -0.5 * z * z - kLogSqrt2Pi - std::log(z) + std::log1p(r * (-1.0 + r * (3.0 + r * (-15.0 + r * 105.0))));
}

// Sign-correct CDF(x) - p without subtracting two numbers near 1: components
// whose standardized argument is non-negative contribute w - w * upper tail.
// When the weights cancel p exactly the tails decide, compared in log space
// so the sign survives underflow between well-separated modes.
double cdf_minus(const GmmSpec& spec, double x, double p) {
  double mass = -p;
  std::vector<double> lower, upper;
  for (std::size_t i = 0; i < spec.weights.size(); ++i) {
    const double z = (x - spec.means[i]) / spec.scales[i];
    const double lw = std::log(spec.weights[i]);
    if (z >= 0.0) {
      mass += spec.weights[i];
      upper.push_back(lw + log_upper_tail(z));
    } else {
      lower.push_back(lw + log_upper_tail(-z));
    }
  }
  const double ll = lower.empty() ? -INFINITY : logsumexp(lower);
  const double lu = upper.empty() ? -INFINITY : logsumexp(upper);
  const double value = mass + (std::exp(ll) - std::exp(lu));
  if (value != 0.0 || mass != 0.0 || ll == lu) return value;
  return ll > lu ? DBL_MIN : -DBL_MIN;
}

}  // namespace

void GmmSpec::validate() const {
  if (weights.empty()) throw std::invalid_argument("GmmSpec: no components");
  if (means.size() != weights.size() || scales.size() != weights.size()) {
    throw std::invalid_argument("GmmSpec: weights, means and scales differ in length");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!(weights[i] >= 0.0)) throw std::invalid_argument("GmmSpec: negative weight");
    if (!(scales[i] > 0.0)) throw std::invalid_argument("GmmSpec: scales must be positive");
    if (!std::isfinite(means[i])) throw std::invalid_argument("GmmSpec: non-finite mean");
    total += weights[i];
  }
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("GmmSpec: weights must sum to 1");
}

GmmSpec GmmSpec::shifted(double offset) const {
  GmmSpec out = *this;
  for (auto& m : out.means) m += offset;
  return out;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double normal_log_pdf(double z) { return -0.5 * z * z - kLogSqrt2Pi; }

double gmm_log_pdf(const GmmSpec& spec, double x) {
  std::vector<double> terms(spec.weights.size());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    terms[i] = std::log(spec.weights[i]) + normal_log_pdf((x - spec.means[i]) / spec.scales[i]) -
               std::log(spec.scales[i]);
  }
  return logsumexp(terms);
}

double gmm_pdf(const GmmSpec& spec, double x) { return std::exp(gmm_log_pdf(spec, x)); }

double gmm_cdf(const GmmSpec& spec, double x) {
  double out = 0.0;
  for (std::size_t i = 0; i < spec.weights.size(); ++i) {
    out += spec.weights[i] * normal_cdf((x - spec.means[i]) / spec.scales[i]);
  }
  return std::clamp(out, 0.0, 1.0);
}

double gmm_quantile(const GmmSpec& spec, double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("gmm_quantile: p must lie in (0, 1)");
  const double lo_mu = *std::min_element(spec.means.begin(), spec.means.end());
  const double hi_mu = *std::max_element(spec.means.begin(), spec.means.end());
  const double s = *std::max_element(spec.scales.begin(), spec.scales.end());
  double lo = lo_mu - 10.0 * s, hi = hi_mu + 10.0 * s;
  for (double step = 10.0 * s; cdf_minus(spec, lo, p) > 0.0; step *= 2.0) lo -= step;
  for (double step = 10.0 * s; cdf_minus(spec, hi, p) < 0.0; step *= 2.0) hi += step;
  for (int it = 0; it < 2000; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (cdf_minus(spec, mid, p) < 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

double transport_map(const GmmSpec& source, const GmmSpec& target, double z) {
  const double p = gmm_cdf(source, z);
  if (p <= 0.0) return -std::numeric_limits<double>::infinity();
  if (p >= 1.0) return std::numeric_limits<double>::infinity();
  return gmm_quantile(target, p);
}

TransportJacobian transport_jacobian(const GmmSpec& source, const GmmSpec& target, double z) {
  TransportJacobian out;
  out.log_value = gmm_log_pdf(source, z) - gmm_log_pdf(target, transport_map(source, target, z));
  if (std::isfinite(out.log_value) && out.log_value < std::log(DBL_MAX) && out.log_value > std::log(DBL_MIN)) {
    out.direct = std::exp(out.log_value);
  }
  return out;
}

double example1_log_jacobian(int which, double mu, double sigma) {
  if (which == 1) return std::log(sigma) + mu * mu / (2.0 * sigma * sigma);
  if (which == 2) return 3.0 * mu * mu / (8.0 * sigma * sigma);
  throw std::invalid_argument("example case must be 1 or 2");
}

GmmSpec example1_source(int which, double mu, double sigma) {
  if (which == 1) return GmmSpec::single(0.0, 1.0);
  if (which == 2) return GmmSpec::symmetric(mu / 2.0, sigma);
  throw std::invalid_argument("example case must be 1 or 2");
}

namespace {

double neg_p_log_p(const GmmSpec& spec, double x) {
  const double lp = gmm_log_pdf(spec, x);
  if (!std::isfinite(lp)) return 0.0;
  return -std::exp(lp) * lp;
}

double adaptive(const GmmSpec& spec, double a, double b, double fa, double fm, double fb, double whole, double tol,
                int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = neg_p_log_p(spec, lm), frm = neg_p_log_p(spec, rm);
  const double left = 0.25 * (m - a) * (fa + 2.0 * flm + fm);
  const double right = 0.25 * (b - m) * (fm + 2.0 * frm + fb);
  const double refined = left + right;
  if (depth <= 0 || std::abs(refined - whole) <= 3.0 * tol) return refined + (refined - whole) / 3.0;
  return adaptive(spec, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adaptive(spec, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace

double gmm_true_nll(const GmmSpec& spec, double tol) {
  spec.validate();
  const double lo_mu = *std::min_element(spec.means.begin(), spec.means.end());
  const double hi_mu = *std::max_element(spec.means.begin(), spec.means.end());
  const double s_max = *std::max_element(spec.scales.begin(), spec.scales.end());
  const double s_min = *std::min_element(spec.scales.begin(), spec.scales.end());
  const double a = lo_mu - 10.0 * s_max, b = hi_mu + 10.0 * s_max;
  const auto panels = static_cast<std::size_t>(std::clamp(std::ceil((b - a) / (0.5 * s_min)), 16.0, 1e6));
  const double h = (b - a) / static_cast<double>(panels);
  double total = 0.0;
  for (std::size_t i = 0; i < panels; ++i) {
    const double x0 = a + h * static_cast<double>(i), x1 = x0 + h;
    const double f0 = neg_p_log_p(spec, x0), f1 = neg_p_log_p(spec, x1);
    const double fm = neg_p_log_p(spec, 0.5 * (x0 + x1));
    const double whole = 0.5 * h * (f0 + 2.0 * fm + f1) * 0.5;
    total += adaptive(spec, x0, x1, f0, fm, f1, whole, tol / static_cast<double>(panels), 40);
  }
  return total;
}

double gmm2d_log_pdf(const std::vector<std::array<double, 2>>& centers, const std::vector<double>& weights,
                     double sigma, double x, double y) {
  std::vector<double> terms(centers.size());
  for (std::size_t i = 0; i < centers.size(); ++i) {
    const double dx = (x - centers[i][0]) / sigma, dy = (y - centers[i][1]) / sigma;
    terms[i] = std::log(weights[i]) - 0.5 * (dx * dx + dy * dy) - 2.0 * kLogSqrt2Pi - 2.0 * std::log(sigma);
  }
  return logsumexp(terms);
}

}  // namespace nvf::oracle
