// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <vector>
#include <string>
#include <unistd.h>

#include "nvf/autodiff.hpp"
#include "nvf/random.hpp"

namespace nvf::test {

inline const double kLog2Pi = std::log(2.0 * std::numbers::pi);

inline double std_normal_logpdf(double x) { return -0.5 * x * x - 0.5 * kLog2Pi; }

inline ad::Tensor random_tensor(ad::Shape shape, Rng& rng, double scale = 1.0) {
  ad::Tensor t = ad::Tensor::zeros(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

/// Fills every parameter with N(0, scale^2) draws.
template <class Params>
void randomize(const Params& params, Rng& rng, double scale) {
  for (auto* p : params)
    for (auto& v : p->value.data()) v = scale * rng.normal();
}

/// Sample mean and its standard error.
struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / (n - 1.0) / n)};
}

inline double log_normal_pdf(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return -0.5 * z * z - std::log(sigma) - 0.5 * kLog2Pi;
}

/// log|det a| by Gaussian elimination with partial pivoting.
inline double log_abs_det(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  double acc = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    std::swap(a[c], a[piv]);
    acc += std::log(std::abs(a[c][c]));
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
    }
  }
  return acc;
}

// Every sequence in {0..s-1}^m, in lexicographic order.
inline std::vector<std::vector<std::size_t>> all_sequences(std::size_t s, std::size_t m) {
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> cur(m, 0);
  while (true) {
    out.push_back(cur);
    std::size_t pos = m;
    while (pos > 0) {
      --pos;
      if (++cur[pos] < s) break;
      cur[pos] = 0;
      if (pos == 0) return out;
    }
    if (m == 0) return out;
  }
}

/// Per-test scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() / ("nvf_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace nvf::test
