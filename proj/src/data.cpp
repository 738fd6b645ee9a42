// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "nvf/data.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "nvf/random.hpp"

namespace nvf::data {

Tensor Standardization::apply(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != original_dim()) {
    throw DataError("expected " + std::to_string(original_dim()) + " columns, got " + ad::shape_string(x.shape()));
  }
  const auto n = x.dim(0);
  Tensor out = Tensor::zeros({n, dim()});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dim(); ++j) {
      const auto c = kept[j];
      out.at(i, j) = (x.at(i, c) - mean[c]) / stddev[c];
    }
  }
  return out;
}

Tensor Standardization::invert(const Tensor& z) const {
  if (z.rank() != 2 || z.dim(1) != dim()) {
    throw DataError("expected " + std::to_string(dim()) + " columns, got " + ad::shape_string(z.shape()));
  }
  const auto n = z.dim(0);
  Tensor out = Tensor::zeros({n, original_dim()});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < original_dim(); ++c) out.at(i, c) = mean[c];
    for (std::size_t j = 0; j < dim(); ++j) out.at(i, kept[j]) = z.at(i, j) * stddev[kept[j]] + mean[kept[j]];
  }
  return out;
}

Tensor Dataset::rows(const std::vector<std::size_t>& index) const {
  const auto d = dim();
  Tensor out = Tensor::zeros({index.size(), d});
  for (std::size_t i = 0; i < index.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = matrix.at(index[i], j);
  }
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void check_weights(const std::vector<double>& w, std::size_t k) {
  if (w.size() != k) throw DataError("weights must have one entry per center");
  double total = 0.0;
  for (double v : w) {
    if (!(v >= 0.0)) throw DataError("weights must be non-negative");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DataError("weights must sum to 1");
}

std::size_t pick(Rng& rng, const std::vector<double>& w) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    acc += w[i];
    if (u < acc) return i;
  }
  return w.size() - 1;
}

}  // namespace

std::vector<Point2> ring_centers(std::size_t k, double radius) {
  std::vector<Point2> out(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(k);
    out[i] = {radius * std::cos(a), radius * std::sin(a)};
  }
  return out;
}

Dataset gen_gmm2d(std::size_t n, const std::vector<Point2>& centers, double sigma, const std::vector<double>& weights,
                  std::uint64_t seed) {
  if (n == 0) throw DataError("gen_gmm2d: n must be at least 1");
  if (centers.empty()) throw DataError("gen_gmm2d: no centers");
  if (!(sigma >= 0.0)) throw DataError("gen_gmm2d: sigma must be non-negative");
  check_weights(weights, centers.size());
  Rng rng(seed);
  Dataset ds;
  ds.matrix = Tensor::zeros({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = centers[pick(rng, weights)];
    const double e0 = rng.normal(), e1 = rng.normal();
    ds.matrix.at(i, 0) = c[0] + sigma * e0;
    ds.matrix.at(i, 1) = c[1] + sigma * e1;
  }
  ds.provenance = "gmm2d(n=" + std::to_string(n) + ",k=" + std::to_string(centers.size()) + ",sigma=" + fmt(sigma) +
                  ",seed=" + std::to_string(seed) + ")";
  return ds;
}

Dataset gen_two_moons(std::size_t n, double noise, std::uint64_t seed) {
  if (n == 0) throw DataError("gen_two_moons: n must be at least 1");
  if (!(noise >= 0.0)) throw DataError("gen_two_moons: noise must be non-negative");
  Rng rng(seed);
  Dataset ds;
  ds.matrix = Tensor::zeros({n, 2});
  const std::size_t first = n - n / 2;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = rng.uniform(0.0, std::numbers::pi);
    double x, y;
    if (i < first) {
      x = std::cos(t);
      y = std::sin(t);
    } else {
      x = 1.0 - std::cos(t);
      y = 0.5 - std::sin(t);
    }
    const double e0 = rng.normal(), e1 = rng.normal();
    ds.matrix.at(i, 0) = x + noise * e0;
    ds.matrix.at(i, 1) = y + noise * e1;
  }
  ds.provenance = "two_moons(n=" + std::to_string(n) + ",noise=" + fmt(noise) + ",seed=" + std::to_string(seed) + ")";
  return ds;
}

Dataset gen_gmm1d(std::size_t n, double mu, double sigma, std::uint64_t seed) {
  if (n == 0) throw DataError("gen_gmm1d: n must be at least 1");
  if (!(sigma > 0.0)) throw DataError("gen_gmm1d: sigma must be positive");
  Rng rng(seed);
  Dataset ds;
  ds.matrix = Tensor::zeros({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    ds.matrix[i] = sign * mu + sigma * rng.normal();
  }
  ds.provenance = "gmm1d(n=" + std::to_string(n) + ",mu=" + fmt(mu) + ",sigma=" + fmt(sigma) +
                  ",seed=" + std::to_string(seed) + ")";
  return ds;
}

Dataset gen_gmm_pairs(std::size_t n, std::size_t pairs, const std::vector<Point2>& centers, double sigma,
                      std::uint64_t seed) {
  if (n == 0) throw DataError("gen_gmm_pairs: n must be at least 1");
  if (pairs == 0) throw DataError("gen_gmm_pairs: pairs must be at least 1");
  if (centers.empty()) throw DataError("gen_gmm_pairs: no centers");
  if (!(sigma >= 0.0)) throw DataError("gen_gmm_pairs: sigma must be non-negative");
  Rng rng(seed);
  Dataset ds;
  ds.matrix = Tensor::zeros({n, 2 * pairs});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < pairs; ++p) {
      const auto& c = centers[rng.index(centers.size())];
      const double e0 = rng.normal(), e1 = rng.normal();
      ds.matrix.at(i, 2 * p) = c[0] + sigma * e0;
      ds.matrix.at(i, 2 * p + 1) = c[1] + sigma * e1;
    }
  }
  ds.provenance = "gmm_pairs(n=" + std::to_string(n) + ",pairs=" + std::to_string(pairs) +
                  ",k=" + std::to_string(centers.size()) + ",sigma=" + fmt(sigma) + ",seed=" + std::to_string(seed) +
                  ")";
  return ds;
}

std::vector<std::vector<double>> cluster_centers(std::size_t dim, std::size_t k, double box, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> centers(k, std::vector<double>(dim));
  for (auto& c : centers)
    for (auto& v : c) v = rng.uniform(-box, box);
  return centers;
}

Dataset gen_clusters(std::size_t n, std::size_t dim, std::size_t k, double box, double sigma, std::uint64_t seed) {
  if (n == 0) throw DataError("gen_clusters: n must be at least 1");
  if (dim == 0 || k == 0) throw DataError("gen_clusters: dim and k must be at least 1");
  if (!(sigma >= 0.0)) throw DataError("gen_clusters: sigma must be non-negative");
  const auto centers = cluster_centers(dim, k, box, seed);
  Rng rng(seed ^ 0x9E3779B97F4A7C15ULL);
  Dataset ds;
  ds.matrix = Tensor::zeros({n, dim});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = centers[rng.index(k)];
    for (std::size_t j = 0; j < dim; ++j) ds.matrix.at(i, j) = c[j] + sigma * rng.normal();
  }
  ds.provenance = "clusters(n=" + std::to_string(n) + ",dim=" + std::to_string(dim) + ",k=" + std::to_string(k) +
                  ",box=" + fmt(box) + ",sigma=" + fmt(sigma) + ",seed=" + std::to_string(seed) + ")";
  return ds;
}

namespace {

std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool parse_number(std::string cell, double& out) {
  const auto b = cell.find_first_not_of(" \t");
  if (b == std::string::npos) return false;
  const auto e = cell.find_last_not_of(" \t");
  cell = cell.substr(b, e - b + 1);
  if (!cell.empty() && cell.front() == '+') cell.erase(0, 1);
  const auto* first = cell.data();
  const auto* last = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

}  // namespace

Dataset parse_csv(std::istream& in, const std::string& provenance) {
  std::vector<double> values;
  std::size_t cols = 0, rows = 0, line_no = 0;
  bool first = true;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto cells = split_cells(line);
    std::vector<double> parsed(cells.size());
    std::vector<bool> ok(cells.size());
    std::size_t numeric = 0;
    for (std::size_t j = 0; j < cells.size(); ++j) {
      ok[j] = parse_number(cells[j], parsed[j]);
      numeric += ok[j] ? 1 : 0;
    }
    if (first) {
      first = false;
      cols = cells.size();
      if (numeric == 0) continue;
    }
    if (cells.size() != cols) {
      throw DataError(provenance + ": ragged row " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                      " columns, expected " + std::to_string(cols));
    }
    for (std::size_t j = 0; j < cells.size(); ++j) {
      if (!ok[j]) {
        throw DataError(provenance + ": non-numeric cell at row " + std::to_string(line_no) + ", column " +
                        std::to_string(j + 1) + " ('" + cells[j] + "')");
      }
      values.push_back(parsed[j]);
    }
    ++rows;
  }
  if (rows == 0) throw DataError(provenance + ": no data rows");
  Dataset ds;
  ds.matrix = Tensor({rows, cols}, std::move(values));
  ds.provenance = provenance;
  return ds;
}

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return parse_csv(in, path);
}

Dataset standardize_and_split(const Dataset& raw, const std::array<double, 3>& fractions, std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw DataError("split fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DataError("split fractions must sum to 1");
  const auto n = raw.size(), d = raw.dim();
  if (n < 3) throw DataError("need at least 3 rows to split, got " + std::to_string(n));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.index(i + 1)]);

  auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
  auto n_val = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 2);
  n_val = std::clamp<std::size_t>(n_val, 1, n - n_train - 1);

  Dataset out;
  out.provenance = raw.provenance;
  out.warnings = raw.warnings;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                 order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());

  auto& st = out.stats;
  st.mean.assign(d, 0.0);
  st.stddev.assign(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0.0;
    for (auto i : out.train) m += raw.matrix.at(i, j);
    m /= static_cast<double>(n_train);
    double v = 0.0;
    for (auto i : out.train) v += (raw.matrix.at(i, j) - m) * (raw.matrix.at(i, j) - m);
    st.mean[j] = m;
    st.stddev[j] = std::sqrt(v / static_cast<double>(n_train));
    if (st.stddev[j] <= 1e-12 * std::max(1.0, std::abs(m))) {
      out.warnings.push_back("column " + std::to_string(j) + " has zero variance on the train split; dropped");
    } else {
      st.kept.push_back(j);
      st.log_jacobian -= std::log(st.stddev[j]);
    }
  }
  out.matrix = st.apply(raw.matrix);
  return out;
}

void write_matrix_csv(std::ostream& os, const Tensor& x) {
  if (x.rank() != 2) throw DataError("write_matrix_csv: expected a matrix");
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    for (std::size_t j = 0; j < x.dim(1); ++j) {
      if (j) os << ',';
      os << fmt(x.at(i, j));
    }
    os << '\n';
  }
}

}  // namespace nvf::data
