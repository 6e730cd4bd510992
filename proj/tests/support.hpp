#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "trajectron/train.hpp"

namespace tt {

using namespace trajectron;

// Swallows library notices for the lifetime of the guard.
struct QuietNotices {
  LogSink saved;
  QuietNotices() : saved(notice_sink()) { notice_sink() = [](const std::string&) {}; }
  ~QuietNotices() { notice_sink() = saved; }
};

// Tiny model used wherever a full-size network would only slow the check down.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.nhe_hidden = 5;
  c.nfe_hidden = 4;
  c.ee_hidden = 3;
  c.decoder_hidden = 6;
  c.gmm_components = 2;
  c.latent_cardinality = 3;
  c.attention_dim = 3;
  c.mlp_hidden = 4;
  c.horizon = 3;
  c.history_length = 3;
  c.min_history = 3;
  return c;
}

// Configuration of the synthetic-data acceptance runs (overfit and fork).
inline ModelConfig synthetic_config() {
  ModelConfig c;
  c.gmm_components = 1;
  c.latent_cardinality = 4;
  return c;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Norm-wise relative error ||a - b|| / max(||a||, ||b||); exact zeros on both sides give 0.
inline double relative_error(const Matrix<double>& a, const Matrix<double>& b) {
  const double scale = std::max(a.norm(), b.norm());
  if (scale == 0.0) return 0.0;
  return (a - b).norm() / scale;
}

// Central differences of a scalar function of several matrix inputs, against the tape.
// Returns the largest per-input relative error.
inline double gradient_check(const std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>& f,
                             const std::vector<Matrix<double>>& inputs, double eps = 1e-5) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& m : inputs) vars.push_back(tape.variable(m));
  const Var<double> out = f(tape, vars);
  tape.backward(out);

  auto eval = [&](const std::vector<Matrix<double>>& xs) {
    Tape<double> t(false);
    std::vector<Var<double>> vs;
    for (const auto& m : xs) vs.push_back(t.constant(m));
    return f(t, vs).scalar();
  };
  double worst = 0.0;
  std::vector<Matrix<double>> xs = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Matrix<double> numeric(inputs[k].rows(), inputs[k].cols());
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      const double x0 = xs[k].data()[i];
      xs[k].data()[i] = x0 + eps;
      const double up = eval(xs);
      xs[k].data()[i] = x0 - eps;
      const double down = eval(xs);
      xs[k].data()[i] = x0;
      numeric.data()[i] = (up - down) / (2 * eps);
    }
    const Matrix<double>& analytic = tape.grad(vars[k].id);
    worst = std::max(worst, relative_error(analytic.size() ? analytic : Matrix<double>::Zero(numeric.rows(), numeric.cols()), numeric));
  }
  return worst;
}

// Same check for a scalar function of model weights: every parameter tensor is compared.
// `objective` builds the scalar on the given tape from (possibly perturbed) weights.
inline double weights_gradient_check(ModelWeights<double>& w,
                                     const std::function<Var<double>(Tape<double>&, ModelWeights<double>&)>& objective,
                                     double eps = 1e-5, std::string* worst_name = nullptr) {
  w.zero_grad();
  {
    Tape<double> tape;
    tape.backward(objective(tape, w));
  }
  double worst = 0.0;
  for (auto& [name, p] : w.params) {
    Matrix<double> numeric(p.value.rows(), p.value.cols());
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double x0 = p.value.data()[i];
      p.value.data()[i] = x0 + eps;
      Tape<double> t1(false);
      const double up = objective(t1, w).scalar();
      p.value.data()[i] = x0 - eps;
      Tape<double> t2(false);
      const double down = objective(t2, w).scalar();
      p.value.data()[i] = x0;
      numeric.data()[i] = (up - down) / (2 * eps);
    }
    const double e = relative_error(p.grad, numeric);
    if (e > worst) {
      worst = e;
      if (worst_name) *worst_name = name;
    }
  }
  return worst;
}

// Random multi-agent scene: agents enter and leave at random times and random-walk
// inside a small box so proximity edges appear, break and re-form.
inline SceneTimeline random_scene(std::mt19937_64& rng, int max_agents, int steps, double box = 4.0) {
  std::uniform_int_distribution<int> n_agents(1, max_agents);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> step(0.0, 0.3);
  SceneTimeline scene;
  scene.name = "random";
  scene.num_timesteps = steps;
  const int n = n_agents(rng);
  for (int a = 0; a < n; ++a) {
    std::uniform_int_distribution<int> start_at(0, steps - 2);
    const int start = start_at(rng);
    std::uniform_int_distribution<int> len_at(2, steps - start);
    const int len = len_at(rng);
    std::vector<Vec2> path;
    Vec2 p{box * u(rng), box * u(rng)};
    for (int k = 0; k < len; ++k) {
      path.push_back(p);
      p += Vec2{step(rng), step(rng)};
    }
    AgentTrack track;
    track.id = a * 3 + 1;  // sparse, non-contiguous ids
    track.segments.push_back({start, differentiate_states(path, scene.dt)});
    scene.agents.emplace(track.id, std::move(track));
  }
  return scene;
}

// Positions of one agent over (t_obs, t_obs + horizon].
inline std::vector<Vec2> future_positions(const SceneTimeline& scene, int id, int t_obs, int horizon) {
  std::vector<Vec2> out;
  for (int k = 1; k <= horizon; ++k) out.push_back(scene.agents.at(id).state_at(t_obs + k)->position);
  return out;
}

inline std::string read_file(const std::filesystem::path& p) { return read_text_file(p); }

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("trajectron_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace tt
