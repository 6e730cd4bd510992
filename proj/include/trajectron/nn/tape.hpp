#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "trajectron/core.hpp"

namespace trajectron::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A named trainable tensor with its gradient accumulator.
template <typename T>
struct Parameter {
  Matrix<T> value;
  Matrix<T> grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

// Ordered so that iteration (and therefore serialization and optimizer updates) is deterministic.
template <typename T>
using ParameterSet = std::map<std::string, Parameter<T>>;

template <typename T>
class Tape;

// Handle to a value recorded on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Matrix<T>& value() const;
  const Matrix<T>& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  T scalar() const { return value()(0, 0); }
};

// Records one forward pass; backward() visits nodes in reverse order of creation,
// which is a reverse topological order by construction.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var<T> constant(Matrix<T> value) { return push(std::move(value), "constant", false, {}); }

  // Leaf whose gradient is kept on the tape (used for input-gradient checks).
  Var<T> variable(Matrix<T> value) { return push(std::move(value), "variable", record_, {}); }

  // Leaf bound to a parameter; backward() adds into param.grad.
  Var<T> param(Parameter<T>& p) {
    Var<T> v = push(Matrix<T>(), "param", record_, {});
    nodes_[v.id].external = &p.value;
    nodes_[v.id].sink = &p;
    return v;
  }
  Var<T> param(const Parameter<T>& p) {
    Var<T> v = push(Matrix<T>(), "param", false, {});
    nodes_[v.id].external = &p.value;
    return v;
  }

  // Appends a computed node. The result is checked for non-finite entries.
  Var<T> push(Matrix<T> value, const char* op, bool needs_grad, Backward backward) {
    if (value.size() > 0 && !value.allFinite()) throw NumericError(std::string("non-finite value produced by ") + op);
    Node n;
    n.value = std::move(value);
    n.op = op;
    n.needs_grad = needs_grad && record_;
    if (n.needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  const Matrix<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  const Matrix<T>& grad(std::size_t id) const { return nodes_[id].grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  const char* op(std::size_t id) const { return nodes_[id].op; }
  std::size_t size() const { return nodes_.size(); }

  template <typename Expr>
  void accumulate(std::size_t id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  // Seeds d(root)/d(root) = 1 for a 1x1 root and propagates.
  void backward(Var<T> root) {
    if (root.value().size() != 1) throw ShapeError("backward() needs a scalar root");
    Matrix<T> seed(1, 1);
    seed(0, 0) = T(1);
    backward(root, seed);
  }

  void backward(Var<T> root, const Matrix<T>& seed) {
    if (!record_) throw ContractError("tape was created without gradient recording");
    accumulate(root.id, seed);
    for (std::size_t k = root.id + 1; k-- > 0;) {
      Node& n = nodes_[k];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      if (!n.grad.allFinite()) throw NumericError(std::string("non-finite gradient at ") + n.op);
      if (n.sink) {
        if (n.sink->grad.size() == 0) n.sink->zero_grad();
        n.sink->grad += n.grad;
      } else if (n.backward) {
        n.backward(*this, k);
      }
    }
  }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    Backward backward;
    const Matrix<T>* external = nullptr;
    Parameter<T>* sink = nullptr;
    bool needs_grad = false;
    const char* op = "";
  };

  bool record_;
  std::deque<Node> nodes_;
};

template <typename T>
const Matrix<T>& Var<T>::value() const {
  return tape->value(id);
}
template <typename T>
const Matrix<T>& Var<T>::grad() const {
  return tape->grad(id);
}

}  // namespace trajectron::nn
