#pragma once

#include <random>
#include <string>
#include <vector>

#include "trajectron/nn/ops.hpp"

namespace trajectron::nn {

// Fused LSTM parameters: weight is [(input + hidden) x 4*hidden] with gate blocks
// ordered input, forget, candidate, output; bias is [1 x 4*hidden].
template <typename T>
struct LstmVars {
  Var<T> weight;
  Var<T> bias;

  Eigen::Index hidden() const { return bias.cols() / 4; }
  Eigen::Index input() const { return weight.rows() - hidden(); }
};

template <typename T>
struct LstmState {
  Var<T> h;
  Var<T> c;
};

template <typename T>
LstmState<T> zero_state(Tape<T>& tape, Eigen::Index rows, Eigen::Index hidden) {
  return {tape.constant(Matrix<T>::Zero(rows, hidden)), tape.constant(Matrix<T>::Zero(rows, hidden))};
}

template <typename T>
LstmState<T> lstm_step(const LstmVars<T>& w, const LstmState<T>& state, Var<T> x) {
  const auto H = w.hidden();
  detail::require(w.bias.cols() == 4 * H && w.weight.cols() == 4 * H, "lstm_step", "weight/bias widths disagree");
  detail::require(x.cols() == w.input(), "lstm_step", "input width " + std::to_string(x.cols()) + " != " + std::to_string(w.input()));
  detail::require(state.h.cols() == H && state.c.cols() == H, "lstm_step", "state width != hidden");
  detail::require(state.h.rows() == x.rows() && state.c.rows() == x.rows(), "lstm_step", "batch rows disagree");
  Var<T> z = add_row(matmul(concat_cols<T>({x, state.h}), w.weight), w.bias);
  Var<T> i = sigmoid(slice_cols(z, 0, H));
  Var<T> f = sigmoid(slice_cols(z, H, H));
  Var<T> g = tanh(slice_cols(z, 2 * H, H));
  Var<T> o = sigmoid(slice_cols(z, 3 * H, H));
  Var<T> c = add(mul(f, state.c), mul(i, g));
  Var<T> h = mul(o, tanh(c));
  return {h, c};
}

// Final forward hidden state concatenated with the final backward hidden state.
template <typename T>
Var<T> bilstm_encode(const std::vector<Var<T>>& sequence, const LstmVars<T>& forward, const LstmVars<T>& backward) {
  if (sequence.empty()) throw ShapeError("bilstm_encode: empty sequence");
  Tape<T>& tape = *sequence.front().tape;
  const auto rows = sequence.front().rows();
  auto fs = zero_state(tape, rows, forward.hidden());
  for (const auto& x : sequence) fs = lstm_step(forward, fs, x);
  auto bs = zero_state(tape, rows, backward.hidden());
  for (auto it = sequence.rbegin(); it != sequence.rend(); ++it) bs = lstm_step(backward, bs, *it);
  return concat_cols<T>({fs.h, bs.h});
}

template <typename T>
struct DenseVars {
  Var<T> weight;  // [in x out]
  Var<T> bias;    // [1 x out]
};

template <typename T>
Var<T> dense(const DenseVars<T>& d, Var<T> x) {
  return add_row(matmul(x, d.weight), d.bias);
}

enum class Activation { Tanh, Relu };

// Hidden layers use `activation`; the last layer is linear.
template <typename T>
Var<T> mlp(const std::vector<DenseVars<T>>& layers, Var<T> x, Activation activation = Activation::Tanh) {
  if (layers.empty()) throw ShapeError("mlp: no layers");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    x = dense(layers[k], x);
    if (k + 1 < layers.size()) x = activation == Activation::Tanh ? tanh(x) : relu(x);
  }
  return x;
}

// Additive attention score v^T tanh(key W1 + query W2), one per row.
template <typename T>
Var<T> attention_score(Var<T> query, Var<T> key, Var<T> v, Var<T> w_key, Var<T> w_query) {
  detail::require(v.cols() == 1 && v.rows() == w_key.cols() && w_key.cols() == w_query.cols(), "attention_score",
                  "attention projection sizes disagree");
  return matmul(tanh(add(matmul(key, w_key), matmul(query, w_query))), v);
}

// KL(q || p) per row for categorical logits, by exact summation.
template <typename T>
Var<T> kl_categorical(Var<T> q_logits, Var<T> p_logits) {
  if (q_logits.cols() != p_logits.cols() || q_logits.rows() != p_logits.rows())
    throw ShapeError("kl_categorical: cardinality mismatch " + detail::dims(q_logits) + " vs " + detail::dims(p_logits));
  Var<T> log_q = log_softmax_rows(q_logits);
  Var<T> log_p = log_softmax_rows(p_logits);
  return sum_cols(mul(exp(log_q), sub(log_q, log_p)));
}

// Uniform fan-in scaled initialization in [-scale/sqrt(fan_in), scale/sqrt(fan_in)].
template <typename T>
Matrix<T> uniform_init(Eigen::Index rows, Eigen::Index cols, double fan_in, double scale, std::mt19937_64& rng) {
  const double bound = scale / std::sqrt(std::max(fan_in, 1.0));
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix<T> m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = static_cast<T>(u(rng));
  return m;
}

}  // namespace trajectron::nn
