// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "nvf/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace nvf::ad {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_string(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t = zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)), value(std::move(value_)), grad(Tensor::zeros(value.shape())) {}

void Parameter::zero_grad() { grad = Tensor::zeros(value.shape()); }

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::StraightThrough: return "straight_through";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Neg: return "neg";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Tanh: return "tanh";
    case Op::Relu: return "relu";
    case Op::Clamp: return "clamp";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::SumLast: return "sum_last";
    case Op::Broadcast: return "broadcast";
    case Op::Reshape: return "reshape";
    case Op::Slice: return "slice";
    case Op::Concat: return "concat";
    case Op::PermuteLast: return "permute_last";
    case Op::Softmax: return "softmax";
    case Op::LogSoftmax: return "log_softmax";
    case Op::LogSumExp: return "logsumexp";
    case Op::GatherRows: return "gather_rows";
    case Op::TriSolve: return "tri_solve";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (tape == nullptr) throw TapeError("unbound variable");
  return tape->value(*this);
}

// ---------------------------------------------------------------------------
// Tape

void Tape::check_open() const {
  if (frozen_) throw TapeError("tape is frozen after backward(); record on a new tape");
}

Var Tape::constant(Tensor value) {
  check_open();
  nodes_.push_back(Node{Op::Leaf, {}, std::move(value), {}, false, nullptr});
  return Var{this, nodes_.size() - 1};
}

Var Tape::input(Tensor value) {
  check_open();
  nodes_.push_back(Node{Op::Leaf, {}, std::move(value), {}, true, nullptr});
  return Var{this, nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
  check_open();
  if (p.grad.shape() != p.value.shape()) p.zero_grad();
  nodes_.push_back(Node{Op::Leaf, {}, p.value, {}, true, &p});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Op op, std::vector<std::size_t> parents, Tensor value, std::vector<double> saved) {
  check_open();
  bool rg = false;
  for (auto p : parents) {
    if (p >= nodes_.size()) throw TapeError("parent handle refers to a later node");
    rg = rg || nodes_[p].requires_grad;
  }
  if (!value.all_finite()) {
    throw NumericError(std::string(op_name(op)) + " produced a non-finite value");
  }
  nodes_.push_back(Node{op, std::move(parents), std::move(value), std::move(saved), rg, nullptr});
  return Var{this, nodes_.size() - 1};
}

Tensor Tape::grad(Var v) const {
  if (v.id < grads_.size() && has_grad_[v.id]) return grads_[v.id];
  return Tensor::zeros(nodes_.at(v.id).value.shape());
}

namespace {

void accumulate(std::vector<Tensor>& grads, std::vector<bool>& has, std::size_t id, Tensor g) {
  if (!has[id]) {
    grads[id] = std::move(g);
    has[id] = true;
    return;
  }
  auto dst = grads[id].data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// A is [m, k], B is [k, n] -> [m, n]
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
          std::size_t k, std::size_t n) {
  std::fill(c.begin(), c.end(), 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

Tensor transpose_matrix(const Tensor& t) {
  const auto r = t.dim(0), c = t.dim(1);
  Tensor out = Tensor::zeros({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = t.at(i, j);
  return out;
}

// Solves op(A) y = rhs in place for one row, op(A) = A or A^T.
void solve_row(const Tensor& a, std::span<double> y, bool lower, bool unit, bool transposed) {
  const auto d = a.dim(0);
  auto A = [&](std::size_t i, std::size_t j) { return transposed ? a.at(j, i) : a.at(i, j); };
  const bool forward_sweep = lower != transposed;
  if (forward_sweep) {
    for (std::size_t i = 0; i < d; ++i) {
      double acc = y[i];
      for (std::size_t j = 0; j < i; ++j) acc -= A(i, j) * y[j];
      y[i] = unit ? acc : acc / A(i, i);
    }
  } else {
    for (std::size_t ii = d; ii-- > 0;) {
      double acc = y[ii];
      for (std::size_t j = ii + 1; j < d; ++j) acc -= A(ii, j) * y[j];
      y[ii] = unit ? acc : acc / A(ii, ii);
    }
  }
}

}  // namespace

std::map<std::string, Tensor> Tape::backward(Var loss) {
  check_open();
  if (loss.tape != this) throw TapeError("loss belongs to a different tape");
  const Tensor& lv = nodes_.at(loss.id).value;
  if (lv.size() != 1) throw TapeError("backward() requires a scalar loss, got " + shape_string(lv.shape()));

  grads_.assign(nodes_.size(), Tensor{});
  has_grad_.assign(nodes_.size(), false);
  grads_[loss.id] = Tensor(lv.shape(), {1.0});
  has_grad_[loss.id] = true;

  std::map<std::string, Tensor> out;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    if (!has_grad_[id] || !nodes_[id].requires_grad) continue;
    const Node& node = nodes_[id];
    if (node.op == Op::Leaf) {
      if (node.param != nullptr) {
        auto& pg = node.param->grad;
        auto g = grads_[id].data();
        for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
        auto [it, inserted] = out.try_emplace(node.param->name, grads_[id]);
        if (!inserted) {
          for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
        }
      }
      continue;
    }
    propagate(id, grads_[id], grads_, has_grad_);
  }
  frozen_ = true;
  return out;
}

void Tape::propagate(std::size_t id, const Tensor& g, std::vector<Tensor>& grads,
                     std::vector<bool>& has) const {
  const Node& node = nodes_[id];
  const Tensor& out = node.value;
  auto needs = [&](std::size_t k) { return nodes_[node.parents[k]].requires_grad; };
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[node.parents[k]].value; };
  auto send = [&](std::size_t k, Tensor t) { accumulate(grads, has, node.parents[k], std::move(t)); };
  auto map1 = [&](const Tensor& src, auto fn) {
    Tensor t = Tensor::zeros(src.shape());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = fn(i);
    return t;
  };

  switch (node.op) {
    case Op::Leaf:
      break;
    case Op::Add:
      if (needs(0)) send(0, g);
      if (needs(1)) send(1, g);
      break;
    case Op::StraightThrough:
      if (needs(0)) send(0, g);
      break;
    case Op::Sub:
      if (needs(0)) send(0, g);
      if (needs(1)) send(1, map1(g, [&](std::size_t i) { return -g[i]; }));
      break;
    case Op::Mul:
      if (needs(0)) send(0, map1(g, [&](std::size_t i) { return g[i] * in(1)[i]; }));
      if (needs(1)) send(1, map1(g, [&](std::size_t i) { return g[i] * in(0)[i]; }));
      break;
    case Op::Neg:
      send(0, map1(g, [&](std::size_t i) { return -g[i]; }));
      break;
    case Op::Scale:
      send(0, map1(g, [&](std::size_t i) { return g[i] * node.saved[0]; }));
      break;
    case Op::AddScalar:
    case Op::Reshape:
      send(0, g.reshaped(in(0).shape()));
      break;
    case Op::MatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
      if (needs(0)) {
        Tensor ga = Tensor::zeros({m, k});
        const Tensor bt = transpose_matrix(b);
        gemm(g.data(), bt.data(), ga.data(), m, n, k);
        send(0, std::move(ga));
      }
      if (needs(1)) {
        Tensor gb = Tensor::zeros({k, n});
        const Tensor at = transpose_matrix(a);
        gemm(at.data(), g.data(), gb.data(), k, m, n);
        send(1, std::move(gb));
      }
      break;
    }
    case Op::Transpose:
      send(0, transpose_matrix(g));
      break;
    case Op::Exp:
      send(0, map1(g, [&](std::size_t i) { return g[i] * out[i]; }));
      break;
    case Op::Log:
      send(0, map1(g, [&](std::size_t i) { return g[i] / in(0)[i]; }));
      break;
    case Op::Tanh:
      send(0, map1(g, [&](std::size_t i) { return g[i] * (1.0 - out[i] * out[i]); }));
      break;
    case Op::Relu:
      send(0, map1(g, [&](std::size_t i) { return in(0)[i] > 0.0 ? g[i] : 0.0; }));
      break;
    case Op::Clamp: {
      const double lo = node.saved[0], hi = node.saved[1];
      send(0, map1(g, [&](std::size_t i) {
             const double x = in(0)[i];
             return (x >= lo && x <= hi) ? g[i] : 0.0;
           }));
      break;
    }
    case Op::Sum:
      send(0, Tensor::full(in(0).shape(), g.item()));
      break;
    case Op::Mean:
      send(0, Tensor::full(in(0).shape(), g.item() / static_cast<double>(in(0).size())));
      break;
    case Op::SumLast: {
      const auto n = in(0).last_dim();
      send(0, map1(in(0), [&](std::size_t i) { return g[i / n]; }));
      break;
    }
    case Op::Broadcast: {
      const auto inner = in(0).size();
      Tensor t = Tensor::zeros(in(0).shape());
      for (std::size_t i = 0; i < g.size(); ++i) t[i % inner] += g[i];
      send(0, std::move(t));
      break;
    }
    case Op::Slice: {
      const auto begin = static_cast<std::size_t>(node.saved[0]);
      const auto n = in(0).last_dim(), w = out.last_dim();
      Tensor t = Tensor::zeros(in(0).shape());
      for (std::size_t r = 0; r < out.outer_size(); ++r)
        for (std::size_t c = 0; c < w; ++c) t[r * n + begin + c] = g[r * w + c];
      send(0, std::move(t));
      break;
    }
    case Op::Concat: {
      const auto total = out.last_dim();
      const auto rows = out.outer_size();
      std::size_t offset = 0;
      for (std::size_t k = 0; k < node.parents.size(); ++k) {
        const auto w = in(k).last_dim();
        if (needs(k)) {
          Tensor t = Tensor::zeros(in(k).shape());
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < w; ++c) t[r * w + c] = g[r * total + offset + c];
          send(k, std::move(t));
        }
        offset += w;
      }
      break;
    }
    case Op::PermuteLast: {
      const auto n = out.last_dim();
      Tensor t = Tensor::zeros(in(0).shape());
      for (std::size_t r = 0; r < out.outer_size(); ++r)
        for (std::size_t c = 0; c < n; ++c)
          t[r * n + static_cast<std::size_t>(node.saved[c])] += g[r * n + c];
      send(0, std::move(t));
      break;
    }
    case Op::Softmax: {
      const auto n = out.last_dim();
      Tensor t = Tensor::zeros(out.shape());
      for (std::size_t r = 0; r < out.outer_size(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * out[r * n + c];
        for (std::size_t c = 0; c < n; ++c) t[r * n + c] = out[r * n + c] * (g[r * n + c] - dot);
      }
      send(0, std::move(t));
      break;
    }
    case Op::LogSoftmax: {
      const auto n = out.last_dim();
      Tensor t = Tensor::zeros(out.shape());
      for (std::size_t r = 0; r < out.outer_size(); ++r) {
        double gs = 0.0;
        for (std::size_t c = 0; c < n; ++c) gs += g[r * n + c];
        for (std::size_t c = 0; c < n; ++c) t[r * n + c] = g[r * n + c] - std::exp(out[r * n + c]) * gs;
      }
      send(0, std::move(t));
      break;
    }
    case Op::LogSumExp: {
      const Tensor& a = in(0);
      const auto n = a.last_dim();
      Tensor t = Tensor::zeros(a.shape());
      for (std::size_t r = 0; r < a.outer_size(); ++r)
        for (std::size_t c = 0; c < n; ++c) t[r * n + c] = g[r] * std::exp(a[r * n + c] - out[r]);
      send(0, std::move(t));
      break;
    }
    case Op::GatherRows: {
      const auto c = out.last_dim();
      Tensor t = Tensor::zeros(in(0).shape());
      for (std::size_t r = 0; r < node.saved.size(); ++r) {
        const auto src = static_cast<std::size_t>(node.saved[r]);
        for (std::size_t j = 0; j < c; ++j) t[src * c + j] += g[r * c + j];
      }
      send(0, std::move(t));
      break;
    }
    case Op::TriSolve: {
      const Tensor& a = in(0);
      const bool lower = node.saved[0] != 0.0, unit = node.saved[1] != 0.0;
      const auto d = a.dim(0);
      const auto rows = out.outer_size();
      // Y = B A^-T  =>  dB_i = A^-T g_i,  dA = -sum_i dB_i y_i^T restricted to the triangle.
      Tensor gb = g;
      for (std::size_t r = 0; r < rows; ++r) solve_row(a, gb.data().subspan(r * d, d), lower, unit, true);
      if (needs(0)) {
        Tensor ga = Tensor::zeros({d, d});
        for (std::size_t i = 0; i < d; ++i) {
          for (std::size_t j = 0; j < d; ++j) {
            const bool in_tri = lower ? (unit ? j < i : j <= i) : (unit ? j > i : j >= i);
            if (!in_tri) continue;
            double acc = 0.0;
            for (std::size_t r = 0; r < rows; ++r) acc -= gb[r * d + i] * out[r * d + j];
            ga.at(i, j) = acc;
          }
        }
        send(0, std::move(ga));
      }
      if (needs(1)) send(1, std::move(gb));
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Ops

namespace {

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw TapeError("unbound variable");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw TapeError("operands recorded on different tapes");
  return tape_of(a);
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <class Fn>
Var unary(Op op, Var a, Fn fn, std::vector<double> saved = {}) {
  const Tensor& x = a.value();
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fn(x[i]);
  return tape_of(a).record(op, {a.id}, std::move(out), std::move(saved));
}

template <class Fn>
Var binary(Op op, Var a, Var b, Fn fn) {
  Tape& t = tape_of(a, b);
  require_same_shape(op_name(op), a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fn(x[i], y[i]);
  return t.record(op, {a.id, b.id}, std::move(out));
}

Shape drop_last(const Shape& s) {
  if (s.empty()) throw ShapeError("cannot reduce the last axis of a scalar");
  return Shape(s.begin(), s.end() - 1);
}

Shape with_last(const Shape& s, std::size_t n) {
  Shape out = s;
  if (out.empty()) throw ShapeError("operation needs rank >= 1");
  out.back() = n;
  return out;
}

void require_matrix(const char* op, const Tensor& t) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
}

}  // namespace

Var add(Var a, Var b) { return binary(Op::Add, a, b, [](double x, double y) { return x + y; }); }
Var straight_through(Var a, Tensor value) {
  if (value.shape() != a.shape()) {
    throw ShapeError("straight_through: shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(value.shape()));
  }
  return a.tape->record(Op::StraightThrough, {a.id}, std::move(value));
}
Var sub(Var a, Var b) { return binary(Op::Sub, a, b, [](double x, double y) { return x - y; }); }
Var mul(Var a, Var b) { return binary(Op::Mul, a, b, [](double x, double y) { return x * y; }); }
Var neg(Var a) { return unary(Op::Neg, a, [](double x) { return -x; }); }
Var scale(Var a, double c) { return unary(Op::Scale, a, [c](double x) { return c * x; }, {c}); }
Var add_scalar(Var a, double c) { return unary(Op::AddScalar, a, [c](double x) { return x + c; }, {c}); }
Var exp(Var a) { return unary(Op::Exp, a, [](double x) { return std::exp(x); }); }
Var log(Var a) { return unary(Op::Log, a, [](double x) { return std::log(x); }); }
Var tanh(Var a) { return unary(Op::Tanh, a, [](double x) { return std::tanh(x); }); }
Var relu(Var a) { return unary(Op::Relu, a, [](double x) { return x > 0.0 ? x : 0.0; }); }

Var clamp(Var a, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo must not exceed hi");
  return unary(Op::Clamp, a, [lo, hi](double x) { return std::clamp(x, lo, hi); }, {lo, hi});
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_matrix("matmul", x);
  require_matrix("matmul", y);
  if (x.dim(1) != y.dim(0)) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(x.shape()) + " x " +
                     shape_string(y.shape()));
  }
  const auto m = x.dim(0), k = x.dim(1), n = y.dim(1);
  Tensor out = Tensor::zeros({m, n});
  gemm(x.data(), y.data(), out.data(), m, k, n);
  return t.record(Op::MatMul, {a.id, b.id}, std::move(out));
}

Var transpose(Var a) {
  require_matrix("transpose", a.value());
  return tape_of(a).record(Op::Transpose, {a.id}, transpose_matrix(a.value()));
}

Var sum(Var a) {
  const auto& v = a.value().values();
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  return tape_of(a).record(Op::Sum, {a.id}, Tensor::scalar(s));
}

Var mean(Var a) {
  const auto& v = a.value().values();
  if (v.empty()) throw ShapeError("mean of an empty tensor");
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  return tape_of(a).record(Op::Mean, {a.id}, Tensor::scalar(s / static_cast<double>(v.size())));
}

Var sum_last(Var a) {
  const Tensor& x = a.value();
  Tensor out = Tensor::zeros(drop_last(x.shape()));
  const auto n = x.last_dim();
  for (std::size_t r = 0; r < out.size(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += x[r * n + c];
    out[r] = s;
  }
  return tape_of(a).record(Op::SumLast, {a.id}, std::move(out));
}

Var broadcast(Var a, std::size_t n) {
  const Tensor& x = a.value();
  Shape shape{n};
  shape.insert(shape.end(), x.shape().begin(), x.shape().end());
  std::vector<double> data;
  data.reserve(n * x.size());
  for (std::size_t i = 0; i < n; ++i) data.insert(data.end(), x.values().begin(), x.values().end());
  return tape_of(a).record(Op::Broadcast, {a.id}, Tensor(std::move(shape), std::move(data)));
}

Var reshape(Var a, Shape shape) {
  return tape_of(a).record(Op::Reshape, {a.id}, a.value().reshaped(std::move(shape)));
}

Var slice(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  const auto n = x.last_dim();
  if (x.rank() == 0 || begin > end || end > n) {
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                     shape_string(x.shape()));
  }
  const auto w = end - begin;
  Tensor out = Tensor::zeros(with_last(x.shape(), w));
  for (std::size_t r = 0; r < x.outer_size(); ++r)
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = x[r * n + begin + c];
  return tape_of(a).record(Op::Slice, {a.id}, std::move(out),
                           {static_cast<double>(begin), static_cast<double>(end)});
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Tape& t = tape_of(parts.front());
  const Shape lead = drop_last(parts.front().shape());
  std::size_t total = 0;
  std::vector<std::size_t> parents;
  for (const auto& p : parts) {
    tape_of(p, parts.front());
    if (drop_last(p.shape()) != lead) {
      throw ShapeError("concat: leading shapes differ " + shape_string(p.shape()) + " vs " +
                       shape_string(parts.front().shape()));
    }
    total += p.value().last_dim();
    parents.push_back(p.id);
  }
  Tensor out = Tensor::zeros(with_last(parts.front().shape(), total));
  const auto rows = shape_size(lead);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const Tensor& x = p.value();
    const auto w = x.last_dim();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) out[r * total + offset + c] = x[r * w + c];
    offset += w;
  }
  return t.record(Op::Concat, std::move(parents), std::move(out));
}

Var permute_last(Var a, const std::vector<std::size_t>& perm) {
  const Tensor& x = a.value();
  const auto n = x.last_dim();
  if (x.rank() == 0 || perm.size() != n) throw ShapeError("permute_last: permutation length mismatch");
  std::vector<double> saved(perm.begin(), perm.end());
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t r = 0; r < x.outer_size(); ++r)
    for (std::size_t c = 0; c < n; ++c) {
      if (perm[c] >= n) throw ShapeError("permute_last: index out of range");
      out[r * n + c] = x[r * n + perm[c]];
    }
  return tape_of(a).record(Op::PermuteLast, {a.id}, std::move(out), std::move(saved));
}

namespace {

double row_max(const Tensor& x, std::size_t r, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < n; ++c) m = std::max(m, x[r * n + c]);
  return m;
}

}  // namespace

Var softmax(Var a) {
  const Tensor& x = a.value();
  const auto n = x.last_dim();
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t r = 0; r < x.outer_size(); ++r) {
    const double m = row_max(x, r, n);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) z += (out[r * n + c] = std::exp(x[r * n + c] - m));
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] /= z;
  }
  return tape_of(a).record(Op::Softmax, {a.id}, std::move(out));
}

Var log_softmax(Var a) {
  const Tensor& x = a.value();
  const auto n = x.last_dim();
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t r = 0; r < x.outer_size(); ++r) {
    const double m = row_max(x, r, n);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) z += std::exp(x[r * n + c] - m);
    const double lz = m + std::log(z);
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = x[r * n + c] - lz;
  }
  return tape_of(a).record(Op::LogSoftmax, {a.id}, std::move(out));
}

Var logsumexp(Var a) {
  const Tensor& x = a.value();
  const auto n = x.last_dim();
  Tensor out = Tensor::zeros(drop_last(x.shape()));
  for (std::size_t r = 0; r < out.size(); ++r) {
    const double m = row_max(x, r, n);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) z += std::exp(x[r * n + c] - m);
    out[r] = m + std::log(z);
  }
  return tape_of(a).record(Op::LogSumExp, {a.id}, std::move(out));
}

Var gather_rows(Var table, const std::vector<std::size_t>& rows) {
  const Tensor& x = table.value();
  require_matrix("gather_rows", x);
  const auto c = x.dim(1);
  Tensor out = Tensor::zeros({rows.size(), c});
  std::vector<double> saved;
  saved.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= x.dim(0)) {
      throw ShapeError("gather_rows: index " + std::to_string(rows[r]) + " out of range for " +
                       shape_string(x.shape()));
    }
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(rows[r] * c), c,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * c));
    saved.push_back(static_cast<double>(rows[r]));
  }
  return tape_of(table).record(Op::GatherRows, {table.id}, std::move(out), std::move(saved));
}

Var tri_solve(Var a, Var b, bool lower, bool unit_diagonal) {
  Tape& t = tape_of(a, b);
  const Tensor& A = a.value();
  require_matrix("tri_solve", A);
  const auto d = A.dim(0);
  if (A.dim(1) != d || b.value().last_dim() != d || b.value().rank() == 0) {
    throw ShapeError("tri_solve: incompatible shapes " + shape_string(A.shape()) + " and " +
                     shape_string(b.shape()));
  }
  Tensor out = b.value();
  for (std::size_t r = 0; r < out.outer_size(); ++r)
    solve_row(A, out.data().subspan(r * d, d), lower, unit_diagonal, false);
  return t.record(Op::TriSolve, {a.id, b.id}, std::move(out),
                  {lower ? 1.0 : 0.0, unit_diagonal ? 1.0 : 0.0});
}

// ---------------------------------------------------------------------------
// Gradient checks

double finite_diff_check(const std::function<Var(Var)>& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
  Tape tape;
  Var xin = tape.input(x);
  Var y = f(xin);
  tape.backward(y);
  const Tensor analytic = tape.grad(xin);

  auto eval = [&](const Tensor& at) {
    Tape t;
    double v = 0.0;
    try {
      v = f(t.input(at)).value().item();
    } catch (const NumericError&) {
      v = std::numeric_limits<double>::quiet_NaN();
    }
    if (!std::isfinite(v)) throw NumericError("finite_diff_check: non-finite value in the eps-neighborhood");
    return v;
  };

  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor xp = x, xm = x;
    xp[i] += eps;
    xm[i] -= eps;
    const double numeric = (eval(xp) - eval(xm)) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

double finite_diff_check(const std::function<Var(Tape&)>& f, std::span<Parameter* const> params,
                         double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
  std::vector<Tensor> saved_grads;
  for (auto* p : params) saved_grads.push_back(p->grad);

  std::map<std::string, Tensor> analytic;
  {
    Tape tape;
    analytic = tape.backward(f(tape));
  }
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->grad = saved_grads[k];

  auto eval = [&] {
    Tape t;
    double v = 0.0;
    try {
      v = f(t).value().item();
    } catch (const NumericError&) {
      v = std::numeric_limits<double>::quiet_NaN();
    }
    if (!std::isfinite(v)) throw NumericError("finite_diff_check: non-finite value in the eps-neighborhood");
    return v;
  };

  double worst = 0.0;
  for (auto* p : params) {
    const auto it = analytic.find(p->name);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double a = it == analytic.end() ? 0.0 : it->second[i];
      const double orig = p->value[i];
      p->value[i] = orig + eps;
      const double fp = eval();
      p->value[i] = orig - eps;
      const double fm = eval();
      p->value[i] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

}  // namespace nvf::ad
