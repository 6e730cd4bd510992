#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "trajectron/core.hpp"
#include "trajectron/nn/ops.hpp"

namespace trajectron::nn {

// Raw decoder outputs are laid out in six blocks of `components` columns:
// weight logits, mu_x, mu_y, log sigma_x, log sigma_y, atanh rho.
inline constexpr int kGmmBlocks = 6;
inline constexpr double kLogSigmaMin = -7.0;
inline constexpr double kLogSigmaMax = 7.0;
inline constexpr double kRhoRawLimit = 5.0;

// Constrained parameters of one bivariate mixture.
struct GmmParams {
  std::vector<double> log_weights;
  std::vector<Vec2> mean;
  std::vector<Vec2> sigma;
  std::vector<double> rho;

  std::size_t components() const { return log_weights.size(); }

  void validate() const {
    double total = 0.0;
    for (std::size_t m = 0; m < components(); ++m) {
      total += std::exp(log_weights[m]);
      if (!(sigma[m].x > 0.0 && sigma[m].y > 0.0)) throw NumericError("gmm: component scale must be positive");
      if (!(rho[m] > -1.0 && rho[m] < 1.0)) throw NumericError("gmm: correlation must lie in (-1, 1)");
    }
    if (std::abs(total - 1.0) > 1e-6) throw NumericError("gmm: mixture weights do not sum to 1");
  }

  Vec2 mixture_mean() const {
    Vec2 m;
    for (std::size_t k = 0; k < components(); ++k) m += mean[k] * std::exp(log_weights[k]);
    return m;
  }
};

template <typename Row>
GmmParams gmm_from_raw(const Row& raw, int components) {
  if (raw.size() != components * kGmmBlocks) throw ShapeError("gmm_from_raw: expected " + std::to_string(components * kGmmBlocks) + " values");
  GmmParams p;
  p.log_weights.resize(components);
  p.mean.resize(components);
  p.sigma.resize(components);
  p.rho.resize(components);
  double mx = -INFINITY;
  for (int m = 0; m < components; ++m) mx = std::max(mx, static_cast<double>(raw(m)));
  double s = 0.0;
  for (int m = 0; m < components; ++m) s += std::exp(static_cast<double>(raw(m)) - mx);
  const double lse = mx + std::log(s);
  for (int m = 0; m < components; ++m) {
    const int M = components;
    p.log_weights[m] = static_cast<double>(raw(m)) - lse;
    p.mean[m] = {static_cast<double>(raw(M + m)), static_cast<double>(raw(2 * M + m))};
    p.sigma[m] = {std::exp(std::clamp<double>(raw(3 * M + m), kLogSigmaMin, kLogSigmaMax)),
                  std::exp(std::clamp<double>(raw(4 * M + m), kLogSigmaMin, kLogSigmaMax))};
    p.rho[m] = std::tanh(std::clamp<double>(raw(5 * M + m), -kRhoRawLimit, kRhoRawLimit));
  }
  return p;
}

inline double bivariate_log_density(Vec2 point, Vec2 mean, Vec2 sigma, double rho) {
  const double dx = (point.x - mean.x) / sigma.x;
  const double dy = (point.y - mean.y) / sigma.y;
  const double d = 1.0 - rho * rho;
  const double q = (dx * dx - 2.0 * rho * dx * dy + dy * dy) / d;
  return -std::log(2.0 * std::numbers::pi) - std::log(sigma.x) - std::log(sigma.y) - 0.5 * std::log(d) - 0.5 * q;
}

// log sum_m w_m N(point; mu_m, Sigma_m) by log-sum-exp.
inline double gmm_log_prob(const GmmParams& p, Vec2 point) {
  double mx = -INFINITY;
  std::vector<double> terms(p.components());
  for (std::size_t m = 0; m < p.components(); ++m) {
    if (!(p.sigma[m].x > 0.0 && p.sigma[m].y > 0.0)) throw NumericError("gmm_log_prob: nonpositive scale");
    if (!(std::abs(p.rho[m]) < 1.0)) throw NumericError("gmm_log_prob: correlation outside (-1, 1)");
    terms[m] = p.log_weights[m] + bivariate_log_density(point, p.mean[m], p.sigma[m], p.rho[m]);
    mx = std::max(mx, terms[m]);
  }
  double s = 0.0;
  for (double t : terms) s += std::exp(t - mx);
  return mx + std::log(s);
}

template <typename Rng>
Vec2 gmm_sample(const GmmParams& p, Rng& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double u = uniform(rng);
  std::size_t pick = p.components() - 1;
  double acc = 0.0;
  for (std::size_t m = 0; m < p.components(); ++m) {
    acc += std::exp(p.log_weights[m]);
    if (u < acc) {
      pick = m;
      break;
    }
  }
  const double z1 = normal(rng);
  const double z2 = normal(rng);
  const double r = p.rho[pick];
  return {p.mean[pick].x + p.sigma[pick].x * z1, p.mean[pick].y + p.sigma[pick].y * (r * z1 + std::sqrt(1.0 - r * r) * z2)};
}

// Differentiable per-row mixture log-likelihood of `target` [n x 2] under raw
// parameters [n x 6M]. Returns [n x 1]. The target is treated as data.
template <typename T>
Var<T> gmm_log_prob(Var<T> raw, const Matrix<T>& target, int components) {
  const int M = components;
  detail::require(raw.cols() == M * kGmmBlocks, "gmm_log_prob", "raw width " + std::to_string(raw.cols()));
  detail::require(target.rows() == raw.rows() && target.cols() == 2, "gmm_log_prob", "target must be [n x 2]");
  const auto n = raw.rows();
  const auto& r = raw.value();
  Matrix<T> out(n, 1);
  // Cached per row/component: responsibilities and partial derivatives.
  Matrix<T> grad_cache(n, M * kGmmBlocks);
  const T log2pi = static_cast<T>(std::log(2.0 * std::numbers::pi));
  std::vector<T> L(M);
  for (Eigen::Index i = 0; i < n; ++i) {
    T amax = r(i, 0);
    for (int m = 1; m < M; ++m) amax = std::max(amax, r(i, m));
    T asum = 0;
    for (int m = 0; m < M; ++m) asum += std::exp(r(i, m) - amax);
    const T alse = amax + std::log(asum);
    const T x = target(i, 0), y = target(i, 1);
    T lmax = -std::numeric_limits<T>::infinity();
    for (int m = 0; m < M; ++m) {
      const T lsx = std::clamp<T>(r(i, 3 * M + m), kLogSigmaMin, kLogSigmaMax);
      const T lsy = std::clamp<T>(r(i, 4 * M + m), kLogSigmaMin, kLogSigmaMax);
      const T rho = std::tanh(std::clamp<T>(r(i, 5 * M + m), -kRhoRawLimit, kRhoRawLimit));
      const T d = T(1) - rho * rho;
      const T dx = (x - r(i, M + m)) * std::exp(-lsx);
      const T dy = (y - r(i, 2 * M + m)) * std::exp(-lsy);
      const T q = (dx * dx - T(2) * rho * dx * dy + dy * dy) / d;
      L[m] = (r(i, m) - alse) - log2pi - lsx - lsy - T(0.5) * std::log(d) - T(0.5) * q;
      lmax = std::max(lmax, L[m]);
      grad_cache(i, M + m) = (dx - rho * dy) / d * std::exp(-lsx);
      grad_cache(i, 2 * M + m) = (dy - rho * dx) / d * std::exp(-lsy);
      grad_cache(i, 3 * M + m) = T(-1) + dx * (dx - rho * dy) / d;
      grad_cache(i, 4 * M + m) = T(-1) + dy * (dy - rho * dx) / d;
      grad_cache(i, 5 * M + m) = rho + dx * dy - rho * q;
    }
    T s = 0;
    for (int m = 0; m < M; ++m) s += std::exp(L[m] - lmax);
    const T lse = lmax + std::log(s);
    out(i, 0) = lse;
    for (int m = 0; m < M; ++m) {
      const T gamma = std::exp(L[m] - lse);
      const T w = std::exp(r(i, m) - alse);
      grad_cache(i, m) = gamma - w;
      for (int b = 1; b < kGmmBlocks; ++b) grad_cache(i, b * M + m) *= gamma;
      const T lsx = r(i, 3 * M + m), lsy = r(i, 4 * M + m), rr = r(i, 5 * M + m);
      if (!(lsx > kLogSigmaMin && lsx < kLogSigmaMax)) grad_cache(i, 3 * M + m) = 0;
      if (!(lsy > kLogSigmaMin && lsy < kLogSigmaMax)) grad_cache(i, 4 * M + m) = 0;
      if (!(rr > -kRhoRawLimit && rr < kRhoRawLimit)) grad_cache(i, 5 * M + m) = 0;
    }
  }
  const bool grad = detail::any_grad({raw}) && raw.tape->recording();
  return raw.tape->push(std::move(out), "gmm_log_prob", grad,
                        [a = raw.id, cache = std::move(grad_cache)](Tape<T>& t, std::size_t self) {
                          t.accumulate(a, Matrix<T>(cache.array().colwise() * t.grad(self).col(0).array()));
                        });
}

}  // namespace trajectron::nn
