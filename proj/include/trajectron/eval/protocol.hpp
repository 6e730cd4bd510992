#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include "trajectron/eval/metrics.hpp"
#include "trajectron/model/online.hpp"

namespace trajectron::eval {

struct EvalOptions {
  int samples = 2000;             // samples per agent and timestep for both model configurations
  std::vector<int> best_of;       // BoN section is emitted iff nonempty
  int timestep_stride = 1;        // evaluate every k-th observation time
  bool baselines = true;
  int bootstrap_resamples = 1000;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const {
    if (samples < 2) throw ConfigError("eval.samples must be at least 2 (the KDE needs two points)");
    for (int n : best_of)
      if (n < 1 || n > samples) throw ConfigError("eval.best_of entries must be in [1, eval.samples]");
    if (timestep_stride < 1) throw ConfigError("eval.timestep_stride must be positive");
    if (bootstrap_resamples < 1) throw ConfigError("eval.bootstrap_resamples must be positive");
    if (threads < 1) throw ConfigError("threads must be positive");
  }
};

// Thread count from TRAJECTRON_THREADS, capped by the hardware.
inline int thread_limit(int requested) {
  int cap = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("TRAJECTRON_THREADS")) {
    int v = 0;
    if (!detail::parse_integral(env, v) || v < 1) throw ConfigError("TRAJECTRON_THREADS must be a positive integer");
    cap = v;
  }
  return std::max(1, std::min(requested, cap));
}

struct MetricRow {
  std::string fold, method, config, metric;
  double value = 0, ci_lo = 0, ci_hi = 0;
  std::size_t n = 0;
};

struct TimestepRow {
  std::string fold, method;
  int timestep = 0;
  double nll = 0, ci_lo = 0, ci_hi = 0;
};

struct MetricTable {
  std::vector<MetricRow> rows;
  std::vector<TimestepRow> nll_per_timestep;
  std::size_t evaluated = 0;  // (agent, t_obs) cases
  std::size_t skipped = 0;    // present agents with enough history but no full horizon
};

inline constexpr const char* kMetricsHeader = "fold,method,config,metric,value,ci_lo,ci_hi,n";
inline constexpr const char* kNllHeader = "fold,method,timestep,nll,ci_lo,ci_hi";

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& rows) {
  os << kMetricsHeader << '\n';
  for (const auto& r : rows)
    os << r.fold << ',' << r.method << ',' << r.config << ',' << r.metric << ',' << format_double(r.value) << ','
       << format_double(r.ci_lo) << ',' << format_double(r.ci_hi) << ',' << r.n << '\n';
}

inline void write_nll_csv(std::ostream& os, const std::vector<TimestepRow>& rows) {
  os << kNllHeader << '\n';
  for (const auto& r : rows)
    os << r.fold << ',' << r.method << ',' << r.timestep << ',' << format_double(r.nll) << ',' << format_double(r.ci_lo)
       << ',' << format_double(r.ci_hi) << '\n';
}

// Per-case values of one method/configuration.
struct MethodValues {
  std::vector<double> ade, fde, nll;
  std::map<int, std::vector<double>> bon_ade, bon_fde;
  std::vector<std::vector<double>> nll_t;  // [timestep][case]

  void append(const MethodValues& o) {
    ade.insert(ade.end(), o.ade.begin(), o.ade.end());
    fde.insert(fde.end(), o.fde.begin(), o.fde.end());
    nll.insert(nll.end(), o.nll.begin(), o.nll.end());
    for (const auto& [n, v] : o.bon_ade) bon_ade[n].insert(bon_ade[n].end(), v.begin(), v.end());
    for (const auto& [n, v] : o.bon_fde) bon_fde[n].insert(bon_fde[n].end(), v.begin(), v.end());
    if (nll_t.size() < o.nll_t.size()) nll_t.resize(o.nll_t.size());
    for (std::size_t t = 0; t < o.nll_t.size(); ++t) nll_t[t].insert(nll_t[t].end(), o.nll_t[t].begin(), o.nll_t[t].end());
  }
};

// Sample-based methods score each case by the mean ADE/FDE over its samples.
inline void score_samples(MethodValues& mv, const std::vector<Trajectory>& samples, const Trajectory& truth,
                          const EvalOptions& opt) {
  double a = 0, f = 0;
  for (const auto& s : samples) {
    a += ade(s, truth);
    f += fde(s, truth);
  }
  mv.ade.push_back(a / static_cast<double>(samples.size()));
  mv.fde.push_back(f / static_cast<double>(samples.size()));
  for (int n : opt.best_of) {
    const auto b = best_of_n(samples, truth, static_cast<std::size_t>(n));
    mv.bon_ade[n].push_back(b.ade);
    mv.bon_fde[n].push_back(b.fde);
  }
  const auto clouds = clouds_from_samples(samples);
  const auto per_t = kde_nll_per_timestep(clouds, truth);
  mv.nll.push_back(mean(per_t));
  if (mv.nll_t.size() < per_t.size()) mv.nll_t.resize(per_t.size());
  for (std::size_t t = 0; t < per_t.size(); ++t) mv.nll_t[t].push_back(per_t[t]);
}

inline void score_deterministic(MethodValues& mv, const Trajectory& pred, const Trajectory& truth, const EvalOptions& opt) {
  mv.ade.push_back(ade(pred, truth));
  mv.fde.push_back(fde(pred, truth));
  for (int n : opt.best_of) {
    mv.bon_ade[n].push_back(mv.ade.back());
    mv.bon_fde[n].push_back(mv.fde.back());
  }
}

struct SceneScores {
  std::map<std::string, MethodValues> methods;  // key "method/config"
  std::size_t evaluated = 0, skipped = 0;
};

// Per-scene random stream keyed by (seed, scene index), independent of scheduling.
inline std::uint64_t scene_seed(std::uint64_t seed, std::size_t scene) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(scene)};
  std::uint64_t out[1];
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  out[0] = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  return out[0];
}

template <typename T>
SceneScores evaluate_scene(const ModelWeights<T>* w, const SceneTimeline& scene, std::size_t scene_index, const EvalOptions& opt) {
  SceneScores out;
  const ModelConfig gcfg = w ? w->config : ModelConfig{};
  const SceneContext ctx(scene, gcfg);
  std::mt19937_64 rng(scene_seed(opt.seed, scene_index));
  for (int t = 0; t < scene.num_timesteps; t += opt.timestep_stride) {
    std::vector<int> ids;
    for (int id : scene.present_at(t)) {
      if (ctx.history_available(id, t) < gcfg.min_history) continue;
      if (ctx.future_available(id, t) < gcfg.horizon) {
        ++out.skipped;
        continue;
      }
      ids.push_back(id);
    }
    if (ids.empty()) continue;
    std::map<int, Trajectory> truth, history;
    for (int id : ids) {
      const auto& track = scene.agents.at(id);
      for (int k = 1; k <= gcfg.horizon; ++k) truth[id].push_back(track.state_at(t + k)->position);
      const int len = std::min(gcfg.history_length, ctx.history_available(id, t));
      for (int k = t - len + 1; k <= t; ++k) history[id].push_back(track.state_at(k)->position);
    }
    out.evaluated += ids.size();
    if (w) {
      const auto encoded = encode_agents_at(*w, ctx, t, ids);
      for (auto mode : {SamplingMode::Full, SamplingMode::ZBest}) {
        const auto batch = predict_encoded(*w, encoded, opt.samples, mode, rng);
        auto& mv = out.methods[std::string("trajectron/") + mode_name(mode)];
        for (const auto& pred : batch) {
          std::vector<Trajectory> samples;
          for (const auto& s : pred.samples) samples.push_back(s.positions);
          score_samples(mv, samples, truth.at(pred.agent_id), opt);
        }
      }
    }
    if (opt.baselines)
      for (int id : ids) {
        score_deterministic(out.methods["constant_velocity/-"], baseline_constant_velocity(history[id], gcfg.horizon), truth[id], opt);
        score_deterministic(out.methods["linear/-"], baseline_linear(history[id], gcfg.horizon), truth[id], opt);
      }
  }
  return out;
}

inline void add_summary(MetricTable& table, const std::string& fold, const std::string& method, const std::string& config,
                        const std::string& metric, const std::vector<double>& values, const EvalOptions& opt) {
  if (values.empty()) return;
  MetricRow r{fold, method, config, metric, mean(values), 0, 0, values.size()};
  if (values.size() >= 2) {
    auto [lo, hi] = bootstrap_ci(values, 0.95, opt.bootstrap_resamples, opt.seed);
    r.ci_lo = lo;
    r.ci_hi = hi;
  } else {
    r.ci_lo = r.ci_hi = r.value;
  }
  table.rows.push_back(r);
}

// Runs the observe-then-predict protocol over every test scene: each agent with at
// least min_history observed steps and a full horizon ahead is one case. Pass a null
// model to score the baselines only.
template <typename T>
MetricTable evaluate_fold(const ModelWeights<T>* w, const std::vector<SceneTimeline>& scenes, const std::string& fold,
                          const EvalOptions& opt) {
  opt.validate();
  std::vector<SceneScores> per_scene(scenes.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k; (k = next++) < scenes.size();) per_scene[k] = evaluate_scene(w, scenes[k], k, opt);
  };
  const int n_threads = std::min<int>(thread_limit(opt.threads), static_cast<int>(std::max<std::size_t>(1, scenes.size())));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < n_threads; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  SceneScores all;
  for (const auto& s : per_scene) {
    for (const auto& [key, mv] : s.methods) all.methods[key].append(mv);
    all.evaluated += s.evaluated;
    all.skipped += s.skipped;
  }
  if (all.skipped > 0) notice(fold + ": " + std::to_string(all.skipped) + " agent cases skipped (horizon unavailable)");

  MetricTable table;
  table.evaluated = all.evaluated;
  table.skipped = all.skipped;
  for (const auto& [key, mv] : all.methods) {
    const auto slash = key.find('/');
    const std::string method = key.substr(0, slash), config = key.substr(slash + 1);
    add_summary(table, fold, method, config, "ade", mv.ade, opt);
    add_summary(table, fold, method, config, "fde", mv.fde, opt);
    for (const auto& [n, v] : mv.bon_ade) add_summary(table, fold, method, config, "bon" + std::to_string(n) + "_ade", v, opt);
    for (const auto& [n, v] : mv.bon_fde) add_summary(table, fold, method, config, "bon" + std::to_string(n) + "_fde", v, opt);
    add_summary(table, fold, method, config, "nll", mv.nll, opt);
    for (std::size_t t = 0; t < mv.nll_t.size(); ++t) {
      const auto& v = mv.nll_t[t];
      TimestepRow r{fold, method + "_" + config, static_cast<int>(t + 1), mean(v), 0, 0};
      if (v.size() >= 2) std::tie(r.ci_lo, r.ci_hi) = bootstrap_ci(v, 0.95, opt.bootstrap_resamples, opt.seed);
      else r.ci_lo = r.ci_hi = r.nll;
      table.nll_per_timestep.push_back(r);
    }
  }
  return table;
}

// ---------------------------------------------------------------- runtime

struct Timing {
  double mean = 0, stddev = 0, median = 0;
};

inline Timing summarize_timings(std::vector<double> secs) {
  Timing t;
  t.mean = mean(secs);
  double v = 0;
  for (double s : secs) v += (s - t.mean) * (s - t.mean);
  t.stddev = secs.size() > 1 ? std::sqrt(v / static_cast<double>(secs.size() - 1)) : 0.0;
  std::sort(secs.begin(), secs.end());
  const std::size_t h = secs.size() / 2;
  t.median = secs.size() % 2 ? secs[h] : 0.5 * (secs[h - 1] + secs[h]);
  return t;
}

namespace detail {

template <typename F>
double timed_call(F& f) {
  if constexpr (std::is_same_v<decltype(f()), double>) {
    return f();
  } else {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
}

}  // namespace detail

// `f` either returns nothing (the whole call is timed) or returns its own measured seconds.
template <typename F>
Timing time_repeated(F&& f, int repetitions) {
  if (repetitions < 1) throw ConfigError("repetitions must be positive");
  detail::timed_call(f);  // warm-up, discarded
  std::vector<double> secs;
  for (int r = 0; r < repetitions; ++r) secs.push_back(detail::timed_call(f));
  return summarize_timings(std::move(secs));
}

// Alternates f and g each repetition so drift in machine load hits both alike.
template <typename F, typename G>
std::pair<Timing, Timing> time_interleaved(F&& f, G&& g, int repetitions) {
  if (repetitions < 1) throw ConfigError("repetitions must be positive");
  detail::timed_call(f);
  detail::timed_call(g);
  std::vector<double> a, b;
  for (int r = 0; r < repetitions; ++r) {
    if (r % 2 == 0) {
      a.push_back(detail::timed_call(f));
      b.push_back(detail::timed_call(g));
    } else {
      b.push_back(detail::timed_call(g));
      a.push_back(detail::timed_call(f));
    }
  }
  return {summarize_timings(std::move(a)), summarize_timings(std::move(b))};
}

struct BenchResult {
  std::string scene;
  int agents = 0;
  int t_obs = 0;
  Timing full, z_best;
  Timing online_step, batch_encode;
  // Medians, which are less sensitive to scheduler hiccups than means on sub-millisecond timings.
  double incremental_ratio() const { return online_step.median > 0 ? batch_encode.median / online_step.median : 0.0; }
};

// The scene as known at time t: later timesteps removed.
inline SceneTimeline truncate_scene(const SceneTimeline& scene, int t) {
  SceneTimeline out = scene;
  out.num_timesteps = std::min(scene.num_timesteps, t + 1);
  out.agents.clear();
  for (const auto& [id, track] : scene.agents) {
    AgentTrack kept = track;
    kept.segments.clear();
    for (const auto& seg : track.segments) {
      if (seg.start > t) continue;
      Segment cut = seg;
      if (cut.end() > t) cut.states.resize(static_cast<std::size_t>(t - seg.start + 1));
      kept.segments.push_back(std::move(cut));
    }
    if (!kept.segments.empty()) out.agents.emplace(id, std::move(kept));
  }
  return out;
}

// Observations of every agent present at t, as the online predictor receives them.
inline Observations observations_at(const SceneTimeline& scene, int t) {
  Observations obs;
  for (int id : scene.present_at(t)) obs[id] = {scene.agents.at(id).type, *scene.agents.at(id).state_at(t)};
  return obs;
}

// One online step at t (after warming up on 0..t-1) against re-encoding every agent
// present at t from scratch on the scene truncated at t. Both include the readout.
template <typename T>
std::pair<Timing, Timing> incremental_benchmark(const ModelWeights<T>& w, const SceneTimeline& scene, int t, int repetitions) {
  OnlinePredictor<T> warm(w);
  for (int u = 0; u < t; ++u) warm.step(observations_at(scene, u));
  const Observations last = observations_at(scene, t);
  const Timing online = time_repeated(
      [&] {
        OnlinePredictor<T> p = warm;
        const auto t0 = std::chrono::steady_clock::now();
        p.step(last);
        for (int id : p.agent_ids()) p.encoding(id);
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      },
      repetitions);
  const EncoderRunner<T> runner(w);
  const SceneTimeline observed = truncate_scene(scene, t);
  const Timing batch = time_repeated(
      [&] {
        const SceneContext fresh(observed, w.config);
        for (int id : observed.present_at(t)) encode_from_scratch(runner, fresh, id, t);
      },
      repetitions);
  return {online, batch};
}

// Times sampling n_samples futures for every predictable agent at the busiest timestep,
// plus one online step against re-encoding all present agents from scratch.
template <typename T>
BenchResult runtime_benchmark(const ModelWeights<T>& w, const SceneTimeline& scene, int n_samples, int repetitions,
                              std::uint64_t seed = 0) {
  const SceneContext ctx(scene, w.config);
  BenchResult res;
  res.scene = scene.name;
  std::size_t best = 0;
  for (int t = 0; t < scene.num_timesteps; ++t) {
    const auto n = predictable_agents(ctx, w.config, t, false).size();
    if (n > best) best = n, res.t_obs = t;
  }
  if (best == 0) throw DataError("scene '" + scene.name + "' has no agent with enough history to benchmark");
  const auto ids = predictable_agents(ctx, w.config, res.t_obs, false);
  res.agents = static_cast<int>(ids.size());
  std::mt19937_64 rng(seed);
  std::tie(res.full, res.z_best) =
      time_interleaved([&] { predict(w, ctx, res.t_obs, n_samples, SamplingMode::Full, rng); },
                       [&] { predict(w, ctx, res.t_obs, n_samples, SamplingMode::ZBest, rng); }, repetitions);

  std::tie(res.online_step, res.batch_encode) = incremental_benchmark(w, scene, res.t_obs, repetitions);
  return res;
}

}  // namespace trajectron::eval
