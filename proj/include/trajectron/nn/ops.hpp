#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "trajectron/nn/tape.hpp"

namespace trajectron::nn {

namespace detail {

template <typename T>
bool any_grad(std::initializer_list<Var<T>> vars) {
  for (const auto& v : vars)
    if (v.tape->needs_grad(v.id)) return true;
  return false;
}

inline void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw ShapeError(std::string(op) + ": " + what);
}

template <typename T>
std::string dims(const Var<T>& v) {
  return std::to_string(v.rows()) + "x" + std::to_string(v.cols());
}

}  // namespace detail

// [n x k] * [k x m]
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::require(a.cols() == b.rows(), "matmul", detail::dims(a) + " * " + detail::dims(b));
  Matrix<T> out = a.value() * b.value();
  return a.tape->push(std::move(out), "matmul", detail::any_grad({a, b}), [a = a.id, b = b.id](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.needs_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "add", detail::dims(a) + " + " + detail::dims(b));
  Matrix<T> out = a.value() + b.value();
  return a.tape->push(std::move(out), "add", detail::any_grad({a, b}), [a = a.id, b = b.id](Tape<T>& t, std::size_t self) {
    t.accumulate(a, t.grad(self));
    t.accumulate(b, t.grad(self));
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "sub", detail::dims(a) + " - " + detail::dims(b));
  Matrix<T> out = a.value() - b.value();
  return a.tape->push(std::move(out), "sub", detail::any_grad({a, b}), [a = a.id, b = b.id](Tape<T>& t, std::size_t self) {
    t.accumulate(a, t.grad(self));
    if (t.needs_grad(b)) t.accumulate(b, -t.grad(self));
  });
}

// Elementwise product.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "mul", detail::dims(a) + " .* " + detail::dims(b));
  Matrix<T> out = a.value().cwiseProduct(b.value());
  return a.tape->push(std::move(out), "mul", detail::any_grad({a, b}), [a = a.id, b = b.id](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(a)) t.accumulate(a, g.cwiseProduct(t.value(b)));
    if (t.needs_grad(b)) t.accumulate(b, g.cwiseProduct(t.value(a)));
  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Matrix<T> out = a.value() * s;
  return a.tape->push(std::move(out), "scale", detail::any_grad({a}), [a = a.id, s](Tape<T>& t, std::size_t self) {
    t.accumulate(a, t.grad(self) * s);
  });
}

// [n x m] + [1 x m] broadcast over rows.
template <typename T>
Var<T> add_row(Var<T> a, Var<T> row) {
  detail::require(row.rows() == 1 && row.cols() == a.cols(), "add_row", detail::dims(a) + " + " + detail::dims(row));
  Matrix<T> out = a.value().rowwise() + row.value().row(0);
  return a.tape->push(std::move(out), "add_row", detail::any_grad({a, row}), [a = a.id, r = row.id](Tape<T>& t, std::size_t self) {
    t.accumulate(a, t.grad(self));
    if (t.needs_grad(r)) t.accumulate(r, t.grad(self).colwise().sum());
  });
}

// [n x m] scaled row-wise by [n x 1].
template <typename T>
Var<T> mul_col(Var<T> a, Var<T> s) {
  detail::require(s.cols() == 1 && s.rows() == a.rows(), "mul_col", detail::dims(a) + " .* " + detail::dims(s));
  Matrix<T> out = a.value().array().colwise() * s.value().col(0).array();
  return a.tape->push(std::move(out), "mul_col", detail::any_grad({a, s}), [a = a.id, s = s.id](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(a)) t.accumulate(a, Matrix<T>(g.array().colwise() * t.value(s).col(0).array()));
    if (t.needs_grad(s)) t.accumulate(s, Matrix<T>(g.cwiseProduct(t.value(a)).rowwise().sum()));
  });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  Matrix<T> out = a.value().unaryExpr([](T x) {
    return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
  });
  return a.tape->push(std::move(out), "sigmoid", detail::any_grad({a}), [a = a.id](Tape<T>& t, std::size_t self) {
    const auto& y = t.value(self);
    t.accumulate(a, Matrix<T>(t.grad(self).array() * y.array() * (T(1) - y.array())));
  });
}

template <typename T>
Var<T> tanh(Var<T> a) {
  Matrix<T> out = a.value().array().tanh().matrix();
  return a.tape->push(std::move(out), "tanh", detail::any_grad({a}), [a = a.id](Tape<T>& t, std::size_t self) {
    const auto& y = t.value(self);
    t.accumulate(a, Matrix<T>(t.grad(self).array() * (T(1) - y.array().square())));
  });
}

template <typename T>
Var<T> exp(Var<T> a) {
  Matrix<T> out = a.value().array().exp().matrix();
  return a.tape->push(std::move(out), "exp", detail::any_grad({a}), [a = a.id](Tape<T>& t, std::size_t self) {
    t.accumulate(a, t.grad(self).cwiseProduct(t.value(self)));
  });
}

template <typename T>
Var<T> relu(Var<T> a) {
  Matrix<T> out = a.value().cwiseMax(T(0));
  return a.tape->push(std::move(out), "relu", detail::any_grad({a}), [a = a.id](Tape<T>& t, std::size_t self) {
    t.accumulate(a, Matrix<T>((t.value(a).array() > T(0)).select(t.grad(self).array(), T(0))));
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  detail::require(!parts.empty(), "concat_cols", "no inputs");
  const auto rows = parts.front().rows();
  Eigen::Index cols = 0;
  bool grad = false;
  for (const auto& p : parts) {
    detail::require(p.rows() == rows, "concat_cols", "row mismatch " + detail::dims(p));
    cols += p.cols();
    grad = grad || p.tape->needs_grad(p.id);
  }
  Matrix<T> out(rows, cols);
  std::vector<std::pair<std::size_t, Eigen::Index>> spans;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    spans.emplace_back(p.id, at);
    at += p.cols();
  }
  return parts.front().tape->push(std::move(out), "concat_cols", grad, [spans](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    for (const auto& [id, offset] : spans)
      if (t.needs_grad(id)) t.accumulate(id, g.middleCols(offset, t.value(id).cols()));
  });
}

template <typename T>
Var<T> slice_cols(Var<T> a, Eigen::Index start, Eigen::Index len) {
  detail::require(start >= 0 && len >= 0 && start + len <= a.cols(), "slice_cols", "range outside " + detail::dims(a));
  Matrix<T> out = a.value().middleCols(start, len);
  return a.tape->push(std::move(out), "slice_cols", detail::any_grad({a}), [a = a.id, start, len](Tape<T>& t, std::size_t self) {
    Matrix<T> g = Matrix<T>::Zero(t.value(a).rows(), t.value(a).cols());
    g.middleCols(start, len) = t.grad(self);
    t.accumulate(a, g);
  });
}

// out.row(r) = a.row(index[r]); backward scatters.
template <typename T>
Var<T> gather_rows(Var<T> a, std::vector<Eigen::Index> index) {
  Matrix<T> out(static_cast<Eigen::Index>(index.size()), a.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    detail::require(index[r] >= 0 && index[r] < a.rows(), "gather_rows", "row index out of range");
    out.row(r) = a.value().row(index[r]);
  }
  return a.tape->push(std::move(out), "gather_rows", detail::any_grad({a}), [a = a.id, index = std::move(index)](Tape<T>& t, std::size_t self) {
    Matrix<T> g = Matrix<T>::Zero(t.value(a).rows(), t.value(a).cols());
    const auto& gs = t.grad(self);
    for (std::size_t r = 0; r < index.size(); ++r) g.row(index[r]) += gs.row(r);
    t.accumulate(a, g);
  });
}

// Row-major reinterpretation.
template <typename T>
Var<T> reshape(Var<T> a, Eigen::Index rows, Eigen::Index cols) {
  detail::require(rows * cols == a.value().size(), "reshape", detail::dims(a) + " to " + std::to_string(rows) + "x" + std::to_string(cols));
  Matrix<T> out = Eigen::Map<const Matrix<T>>(a.value().data(), rows, cols);
  return a.tape->push(std::move(out), "reshape", detail::any_grad({a}), [a = a.id](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    t.accumulate(a, Eigen::Map<const Matrix<T>>(g.data(), t.value(a).rows(), t.value(a).cols()));
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  Matrix<T> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape->push(std::move(out), "sum", detail::any_grad({a}), [a = a.id](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)(0, 0);
    t.accumulate(a, Matrix<T>::Constant(t.value(a).rows(), t.value(a).cols(), g));
  });
}

// [n x m] -> [n x 1]
template <typename T>
Var<T> sum_cols(Var<T> a) {
  Matrix<T> out = a.value().rowwise().sum();
  return a.tape->push(std::move(out), "sum_cols", detail::any_grad({a}), [a = a.id](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    t.accumulate(a, Matrix<T>(g.col(0).replicate(1, t.value(a).cols())));
  });
}

template <typename T>
Var<T> log_softmax_rows(Var<T> a) {
  const auto& x = a.value();
  Matrix<T> out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T m = x.row(r).maxCoeff();
    const T lse = m + std::log((x.row(r).array() - m).exp().sum());
    out.row(r) = x.row(r).array() - lse;
  }
  return a.tape->push(std::move(out), "log_softmax", detail::any_grad({a}), [a = a.id](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    Matrix<T> p = y.array().exp().matrix();
    Matrix<T> gs = g.rowwise().sum();
    t.accumulate(a, Matrix<T>(g.array() - p.array().colwise() * gs.col(0).array()));
  });
}

template <typename T>
Var<T> softmax_rows(Var<T> a) {
  return exp(log_softmax_rows(a));
}

// Row-wise log-sum-exp: [n x m] -> [n x 1].
template <typename T>
Var<T> logsumexp_rows(Var<T> a) {
  const auto& x = a.value();
  Matrix<T> out(x.rows(), 1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T m = x.row(r).maxCoeff();
    out(r, 0) = m + std::log((x.row(r).array() - m).exp().sum());
  }
  return a.tape->push(std::move(out), "logsumexp", detail::any_grad({a}), [a = a.id](Tape<T>& t, std::size_t self) {
    const auto& x = t.value(a);
    const auto& y = t.value(self);
    Matrix<T> w = (x.array().colwise() - y.col(0).array()).exp().matrix();
    t.accumulate(a, Matrix<T>(w.array().colwise() * t.grad(self).col(0).array()));
  });
}

}  // namespace trajectron::nn
