// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nvf::ad {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised when a forward value becomes NaN or infinite.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major array of doubles. Rank 0 is a scalar.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  /// Length of the last axis (1 for scalars).
  std::size_t last_dim() const { return shape_.empty() ? 1 : shape_.back(); }
  /// Product of all axes except the last.
  std::size_t outer_size() const { return last_dim() == 0 ? 0 : size() / last_dim(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double at(std::size_t row, std::size_t col) const { return data_[row * last_dim() + col]; }
  double& at(std::size_t row, std::size_t col) { return data_[row * last_dim() + col]; }
  double item() const;

  Tensor reshaped(Shape shape) const;
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value);

  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad();
};

enum class Op {
  Leaf,
  Add,
  Sub,
  Mul,
  Neg,
  Scale,
  AddScalar,
  MatMul,
  Transpose,
  Exp,
  Log,
  Tanh,
  Relu,
  Clamp,
  Sum,
  Mean,
  SumLast,
  Broadcast,
  Reshape,
  Slice,
  Concat,
  PermuteLast,
  Softmax,
  LogSoftmax,
  LogSumExp,
  GatherRows,
  TriSolve,
  StraightThrough,
};

const char* op_name(Op op);

class Tape;

/// Handle to a node recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Define-by-run reverse-mode tape. Nodes are appended in evaluation order, so
/// parents always precede children. A tape is single-use: backward() freezes it.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf whose gradient is retained and readable through grad().
  Var input(Tensor value);
  /// Leaf bound to a parameter; backward() accumulates into param.grad.
  Var param(Parameter& param);

  /// Appends a node computed by one of the op functions below.
  Var record(Op op, std::vector<std::size_t> parents, Tensor value,
             std::vector<double> saved = {});

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  /// Gradient of the last backward() loss with respect to v (zeros if unreached).
  Tensor grad(Var v) const;

  /// Reverse sweep from a scalar loss. Accumulates parameter gradients and
  /// returns this sweep's contribution keyed by parameter name.
  std::map<std::string, Tensor> backward(Var loss);

  bool frozen() const { return frozen_; }
  std::size_t size() const { return nodes_.size(); }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

 private:
  struct Node {
    Op op = Op::Leaf;
    std::vector<std::size_t> parents;
    Tensor value;
    std::vector<double> saved;
    bool requires_grad = false;
    Parameter* param = nullptr;
  };

  void check_open() const;
  void propagate(std::size_t id, const Tensor& g, std::vector<Tensor>& grads,
                 std::vector<bool>& has_grad) const;

  // Deque keeps value() references valid while new nodes are recorded.
  std::deque<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<bool> has_grad_;
  bool frozen_ = false;
};

// Elementwise ops require identical shapes; use broadcast() explicitly.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var relu(Var a);
/// Gradient passes where lo <= a <= hi and is zero outside.
Var clamp(Var a, double lo, double hi = std::numeric_limits<double>::infinity());
Var sum(Var a);
Var mean(Var a);
/// Sums the last axis away: [.., n] -> [..].
Var sum_last(Var a);
/// Prepends a batch axis of length n: S -> [n, S...].
Var broadcast(Var a, std::size_t n);
Var reshape(Var a, Shape shape);
/// Columns [begin, end) of the last axis.
Var slice(Var a, std::size_t begin, std::size_t end);
/// Concatenation along the last axis.
Var concat(const std::vector<Var>& parts);
/// out[..., i] = a[..., perm[i]].
Var permute_last(Var a, const std::vector<std::size_t>& perm);
Var softmax(Var a);
Var log_softmax(Var a);
/// Reduces the last axis: [.., n] -> [..].
Var logsumexp(Var a);
/// Rows of a matrix table selected by index: [R, C] x idx[n] -> [n, C].
Var gather_rows(Var table, const std::vector<std::size_t>& rows);
/// Forward value is `value`; the gradient passes to a unchanged.
Var straight_through(Var a, Tensor value);
/// Solves A y_i = b_i for every row b_i of B, where A is square triangular.
/// With unit_diagonal the diagonal of A is taken as 1 and never read.
Var tri_solve(Var a, Var b, bool lower, bool unit_diagonal);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator-(Var a) { return neg(a); }

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
/// for a scalar function of one tensor.
double finite_diff_check(const std::function<Var(Var)>& f, const Tensor& x, double eps);

/// Same check with respect to parameter values; f records its loss on the given tape.
double finite_diff_check(const std::function<Var(Tape&)>& f,
                         std::span<Parameter* const> params, double eps);

}  // namespace nvf::ad
