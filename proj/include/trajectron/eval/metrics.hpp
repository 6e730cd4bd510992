#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "trajectron/core.hpp"

namespace trajectron::eval {

using Trajectory = std::vector<Vec2>;

inline void require_same_length(std::span<const Vec2> a, std::span<const Vec2> b, const char* what) {
  if (a.size() != b.size()) throw ShapeError(std::string(what) + ": length mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  if (a.empty()) throw ShapeError(std::string(what) + ": empty trajectory");
}

inline double ade(std::span<const Vec2> predicted, std::span<const Vec2> truth) {
  require_same_length(predicted, truth, "ade");
  double s = 0.0;
  for (std::size_t t = 0; t < truth.size(); ++t) s += distance(predicted[t], truth[t]);
  return s / static_cast<double>(truth.size());
}

inline double fde(std::span<const Vec2> predicted, std::span<const Vec2> truth) {
  require_same_length(predicted, truth, "fde");
  return distance(predicted.back(), truth.back());
}

struct BestOfN {
  double ade = 0.0;
  double fde = 0.0;
};

// Minimum ADE and minimum FDE over the first n samples, minimized independently.
inline BestOfN best_of_n(std::span<const Trajectory> samples, std::span<const Vec2> truth, std::size_t n) {
  if (n < 1) throw ConfigError("best_of_n: N must be at least 1");
  if (samples.size() < n) throw DataError("best_of_n: " + std::to_string(samples.size()) + " samples, need " + std::to_string(n));
  BestOfN b{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  for (std::size_t k = 0; k < n; ++k) {
    b.ade = std::min(b.ade, ade(samples[k], truth));
    b.fde = std::min(b.fde, fde(samples[k], truth));
  }
  return b;
}

// Gaussian KDE over 2D points with Scott's bandwidth (covariance * n^(-1/3)).
class KdeModel {
 public:
  static constexpr double kJitter = 1e-9;

  explicit KdeModel(std::vector<Vec2> points) : points_(std::move(points)) {
    const std::size_t n = points_.size();
    if (n < 2) throw DataError("kde: need at least 2 samples, got " + std::to_string(n));
    Vec2 mean;
    for (const auto& p : points_) mean += p;
    mean = mean * (1.0 / static_cast<double>(n));
    double sxx = 0, syy = 0, sxy = 0;
    for (const auto& p : points_) {
      const Vec2 d = p - mean;
      sxx += d.x * d.x;
      syy += d.y * d.y;
      sxy += d.x * d.y;
    }
    const double denom = static_cast<double>(n - 1);
    const double factor = std::pow(static_cast<double>(n), -1.0 / 3.0);
    a_ = sxx / denom * factor;
    c_ = syy / denom * factor;
    b_ = sxy / denom * factor;
    if (!(a_ * c_ - b_ * b_ > 0.0) || !(a_ > 0.0)) {
      a_ += kJitter;
      c_ += kJitter;
    }
    det_ = a_ * c_ - b_ * b_;
    if (!(det_ > 0.0)) throw NumericError("kde: bandwidth matrix is not positive definite");
  }

  // Bandwidth matrix [[a, b], [b, c]].
  double bandwidth_xx() const { return a_; }
  double bandwidth_yy() const { return c_; }
  double bandwidth_xy() const { return b_; }
  std::size_t size() const { return points_.size(); }

  double log_density(Vec2 q) const {
    const double norm = -std::log(2.0 * std::numbers::pi) - 0.5 * std::log(det_) - std::log(static_cast<double>(points_.size()));
    // log-sum-exp over kernels
    std::vector<double> e(points_.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < points_.size(); ++k) {
      const Vec2 d = q - points_[k];
      const double m = (c_ * d.x * d.x - 2.0 * b_ * d.x * d.y + a_ * d.y * d.y) / det_;
      e[k] = -0.5 * m;
      mx = std::max(mx, e[k]);
    }
    double s = 0.0;
    for (double v : e) s += std::exp(v - mx);
    return norm + mx + std::log(s);
  }

 private:
  std::vector<Vec2> points_;
  double a_ = 0, b_ = 0, c_ = 0, det_ = 0;
};

// -log KDE density of the truth at every timestep. clouds[t] holds the samples at step t.
inline std::vector<double> kde_nll_per_timestep(std::span<const std::vector<Vec2>> clouds, std::span<const Vec2> truth) {
  if (clouds.size() != truth.size()) throw ShapeError("kde_nll: horizon mismatch");
  if (clouds.empty()) throw ShapeError("kde_nll: empty horizon");
  std::vector<double> out;
  out.reserve(truth.size());
  for (std::size_t t = 0; t < truth.size(); ++t) out.push_back(-KdeModel(clouds[t]).log_density(truth[t]));
  return out;
}

inline double kde_nll(std::span<const std::vector<Vec2>> clouds, std::span<const Vec2> truth) {
  const auto per_step = kde_nll_per_timestep(clouds, truth);
  double s = 0.0;
  for (double v : per_step) s += v;
  return s / static_cast<double>(per_step.size());
}

// Transposes sample trajectories [sample][t] into per-timestep clouds [t][sample].
inline std::vector<std::vector<Vec2>> clouds_from_samples(std::span<const Trajectory> samples) {
  if (samples.empty()) throw DataError("no samples");
  std::vector<std::vector<Vec2>> clouds(samples.front().size());
  for (const auto& s : samples) {
    if (s.size() != clouds.size()) throw ShapeError("samples have different horizons");
    for (std::size_t t = 0; t < s.size(); ++t) clouds[t].push_back(s[t]);
  }
  return clouds;
}

inline double mean(std::span<const double> v) {
  if (v.empty()) throw DataError("mean of empty set");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Percentile bootstrap interval of the mean.
inline std::pair<double, double> bootstrap_ci(std::span<const double> values, double confidence = 0.95, int resamples = 1000,
                                              std::uint64_t seed = 0) {
  if (values.size() < 2) throw DataError("bootstrap_ci: need at least 2 values");
  if (!(confidence > 0.0 && confidence < 1.0)) throw ConfigError("bootstrap_ci: confidence must be in (0, 1)");
  if (resamples < 1) throw ConfigError("bootstrap_ci: resamples must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
  std::vector<double> means(resamples);
  for (int r = 0; r < resamples; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < values.size(); ++k) s += values[pick(rng)];
    means[r] = s / static_cast<double>(values.size());
  }
  std::sort(means.begin(), means.end());
  // Linear interpolation between order statistics.
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(resamples - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, means.size() - 1);
    return means[lo] + (pos - static_cast<double>(lo)) * (means[hi] - means[lo]);
  };
  const double alpha = 1.0 - confidence;
  double lo = quantile(alpha / 2.0), hi = quantile(1.0 - alpha / 2.0);
  // Keep the interval well formed when all resampled means agree up to rounding.
  const double m = mean(values);
  lo = std::min(lo, m);
  hi = std::max(hi, m);
  return {lo, hi};
}

// ---------------------------------------------------------------- baselines

// Extrapolates the last finite-difference velocity of the history.
inline Trajectory baseline_constant_velocity(std::span<const Vec2> history, int horizon) {
  if (history.size() < 2) throw DataError("baseline needs at least 2 history points");
  if (horizon < 1) throw ConfigError("horizon must be at least 1");
  const Vec2 last = history.back();
  const Vec2 step = last - history[history.size() - 2];
  Trajectory out;
  for (int k = 1; k <= horizon; ++k) out.push_back(last + step * static_cast<double>(k));
  return out;
}

// Least-squares line fit of x(t) and y(t) over history steps t = 0..n-1, extrapolated to t = n..n+horizon-1.
inline Trajectory baseline_linear(std::span<const Vec2> history, int horizon) {
  if (history.size() < 2) throw DataError("baseline needs at least 2 history points");
  if (horizon < 1) throw ConfigError("horizon must be at least 1");
  const double n = static_cast<double>(history.size());
  const double t_mean = (n - 1.0) / 2.0;
  Vec2 p_mean;
  for (const auto& p : history) p_mean += p;
  p_mean = p_mean * (1.0 / n);
  double stt = 0.0;
  Vec2 stp;
  for (std::size_t k = 0; k < history.size(); ++k) {
    const double dt = static_cast<double>(k) - t_mean;
    stt += dt * dt;
    stp += (history[k] - p_mean) * dt;
  }
  const Vec2 slope = stp * (1.0 / stt);
  Trajectory out;
  for (int k = 0; k < horizon; ++k) out.push_back(p_mean + slope * (n + k - t_mean));
  return out;
}

}  // namespace trajectron::eval
