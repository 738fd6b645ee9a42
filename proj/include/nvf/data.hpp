// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "nvf/autodiff.hpp"

namespace nvf::data {

using ad::Tensor;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-column affine map fitted on the train split. mean and stddev cover
/// every original column; only `kept` columns survive standardization.
struct Standardization {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<std::size_t> kept;
  /// sum over kept columns of ln(1 / stddev).
  double log_jacobian = 0.0;

  std::size_t original_dim() const { return mean.size(); }
  std::size_t dim() const { return kept.size(); }
  /// [n, original_dim] -> [n, dim].
  Tensor apply(const Tensor& x) const;
  /// [n, dim] -> [n, original_dim]; dropped columns take their constant value.
  Tensor invert(const Tensor& z) const;
};

struct Dataset {
  Tensor matrix;  // [n, d]
  std::string provenance;
  std::vector<std::size_t> train, val, test;
  Standardization stats;
  std::vector<std::string> warnings;

  std::size_t size() const { return matrix.rank() == 2 ? matrix.dim(0) : 0; }
  std::size_t dim() const { return matrix.rank() == 2 ? matrix.dim(1) : 0; }
  Tensor rows(const std::vector<std::size_t>& index) const;
  Tensor train_matrix() const { return rows(train); }
  Tensor val_matrix() const { return rows(val); }
  Tensor test_matrix() const { return rows(test); }
};

using Point2 = std::array<double, 2>;

/// k centers evenly spaced on a circle, the first at angle 0.
std::vector<Point2> ring_centers(std::size_t k, double radius);

/// Picks a center by weight, then adds N(0, sigma^2 I).
Dataset gen_gmm2d(std::size_t n, const std::vector<Point2>& centers, double sigma, const std::vector<double>& weights,
                  std::uint64_t seed);

/// Moon 0: (cos t, sin t); moon 1: (1 - cos t, 0.5 - sin t); t ~ U[0, pi], plus N(0, noise^2 I).
/// Odd n gives the extra point to moon 0.
Dataset gen_two_moons(std::size_t n, double noise, std::uint64_t seed);

/// Equal-weight mixture of N(-mu, sigma^2) and N(mu, sigma^2).
Dataset gen_gmm1d(std::size_t n, double mu, double sigma, std::uint64_t seed);

/// 2 * pairs columns; each pair of columns is an independent gen_gmm2d draw
/// with equal weights over `centers`.
Dataset gen_gmm_pairs(std::size_t n, std::size_t pairs, const std::vector<Point2>& centers, double sigma,
                      std::uint64_t seed);

/// k clusters in `dim` dimensions: centers uniform in [-box, box]^dim
/// (drawn first from the seed), equal weights, isotropic N(0, sigma^2 I) noise.
Dataset gen_clusters(std::size_t n, std::size_t dim, std::size_t k, double box, double sigma, std::uint64_t seed);
/// The centers gen_clusters uses for these arguments.
std::vector<std::vector<double>> cluster_centers(std::size_t dim, std::size_t k, double box, std::uint64_t seed);

/// Numeric CSV with an optional header (a first row with no numeric cell).
Dataset load_csv(const std::string& path);
Dataset parse_csv(std::istream& in, const std::string& provenance);

/// Shuffles rows into train/val/test with sizes round(f * n), fits the
/// standardization on train, transforms every split and drops zero-variance columns.
Dataset standardize_and_split(const Dataset& raw, const std::array<double, 3>& fractions, std::uint64_t seed);

/// Rows of doubles in %.17g, comma separated, no header.
void write_matrix_csv(std::ostream& os, const Tensor& x);

}  // namespace nvf::data
