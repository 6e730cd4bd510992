#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "trajectron/cli/run_config.hpp"

namespace trajectron::cli {

inline constexpr const char* kConfigDump = "config.txt";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kNllFile = "nll_per_timestep.csv";
inline constexpr const char* kSamplesFile = "samples.jsonl";
inline constexpr const char* kPlotFile = "plot.svg";
inline constexpr const char* kRuntimeFile = "runtime.csv";

// Exit codes: 0 success, 2 configuration/usage/input errors, 1 anything else.
template <typename F>
int guarded(F&& body, std::ostream& err = std::cerr) {
  try {
    body();
    return 0;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

inline void require_file(const std::filesystem::path& p, const char* what) {
  if (p.empty() || !std::filesystem::is_regular_file(p)) throw ConfigError(std::string(what) + " not found: " + p.string());
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
}

// Creates the output directory and dumps the effective configuration into it.
inline void prepare_output(const RunConfig& c) {
  std::filesystem::create_directories(c.out);
  write_file(c.out / kConfigDump, c.to_text());
}

// Calls f.template operator()<float|double>() according to the configured precision.
template <typename F>
void with_precision(int precision, F&& f) {
  if (precision == 64)
    f.template operator()<double>();
  else
    f.template operator()<float>();
}

// ---------------------------------------------------------------- train

inline void cmd_train(const RunConfig& c, std::ostream& out = std::cout) {
  c.validate();
  const auto scenes = training_scenes(c);  // load before anything is written
  prepare_output(c);
  with_precision(c.precision, [&]<typename T>() {
    TrainOptions opt;
    opt.out_dir = c.out;
    const auto res = train_loop<T>(scenes, c.model, c.train_config(), opt);
    out << "trained " << res.history.size() << " steps on " << res.train_samples << " samples; final loss "
        << format_double(res.history.back().total) << '\n';
    if (res.best_step >= 0) out << "best validation objective " << format_double(res.best_validation) << " at step " << res.best_step << '\n';
  });
}

// ---------------------------------------------------------------- evaluate

template <typename T>
ModelWeights<T> load_compatible(const RunConfig& c, const std::filesystem::path& checkpoint) {
  auto w = load_weights<T>(checkpoint);
  if (w.config.to_text() != c.model.to_text())
    throw ConfigError("checkpoint " + checkpoint.string() + " was trained with a different model configuration");
  return w;
}

inline void cmd_evaluate(const RunConfig& c, const std::filesystem::path& checkpoint, std::ostream& out = std::cout) {
  c.validate();
  require_file(checkpoint, "checkpoint");
  const auto scenes = test_scenes(c);
  const std::string fold = c.fold.empty() ? c.synthetic : c.fold;
  with_precision(c.precision, [&]<typename T>() {
    const auto w = load_compatible<T>(c, checkpoint);
    prepare_output(c);
    const auto table = eval::evaluate_fold(&w, scenes, fold, c.eval_options());
    std::ostringstream metrics, nll;
    eval::write_metrics_csv(metrics, table.rows);
    eval::write_nll_csv(nll, table.nll_per_timestep);
    write_file(c.out / kMetricsFile, metrics.str());
    write_file(c.out / kNllFile, nll.str());
    out << "evaluated " << table.evaluated << " agent cases, skipped " << table.skipped << " (horizon unavailable)\n";
    for (const auto& r : table.rows)
      if (r.metric == "ade" || r.metric == "fde" || r.metric == "nll")
        out << "  " << r.method << '/' << r.config << ' ' << r.metric << ' ' << format_double(r.value) << '\n';
  });
}

// ---------------------------------------------------------------- predict

inline SamplingMode parse_mode(const std::string& m) {
  if (m == "full") return SamplingMode::Full;
  if (m == "z_best") return SamplingMode::ZBest;
  throw ConfigError("mode must be 'full' or 'z_best'");
}

inline nlohmann::json gmm_json(const nn::GmmParams& p) {
  nlohmann::json j;
  j["log_weights"] = p.log_weights;
  for (std::size_t m = 0; m < p.components(); ++m) {
    j["mean"].push_back({p.mean[m].x, p.mean[m].y});
    j["sigma"].push_back({p.sigma[m].x, p.sigma[m].y});
  }
  j["rho"] = p.rho;
  return j;
}

// One JSON object per line and (agent, sample).
inline std::string samples_jsonl(const PredictionBatch& batch, int t_obs) {
  std::string text;
  for (const auto& pred : batch)
    for (std::size_t k = 0; k < pred.samples.size(); ++k) {
      const auto& s = pred.samples[k];
      nlohmann::json j;
      j["agent_id"] = pred.agent_id;
      j["type"] = pred.type;
      j["sample"] = k;
      j["z"] = s.z;
      j["t_obs"] = t_obs;
      j["positions"] = nlohmann::json::array();
      for (const auto& p : s.positions) j["positions"].push_back({p.x, p.y});
      j["gmm"] = nlohmann::json::array();
      for (const auto& g : s.gmm) j["gmm"].push_back(gmm_json(g));
      text += j.dump() + "\n";
    }
  return text;
}

inline SceneTimeline load_scene(const RunConfig& c, const std::filesystem::path& scene_file) {
  require_file(scene_file, "scene file");
  auto scene = ingest_file(scene_file, c.model.dt);
  scene.name = scene_file.stem().string();
  return scene;
}

// Samples futures for every agent present at t_obs (default: the last timestep).
inline void cmd_predict(const RunConfig& c, const std::filesystem::path& checkpoint, const std::filesystem::path& scene_file,
                        int n_samples, const std::string& mode_name_arg, std::optional<int> t_obs, std::ostream& out = std::cout) {
  if (c.precision != 32 && c.precision != 64) throw ConfigError("precision must be 32 or 64");
  require_file(checkpoint, "checkpoint");
  const SamplingMode mode = parse_mode(mode_name_arg);
  if (n_samples < 1) throw ConfigError("--samples must be at least 1");
  const SceneTimeline scene = load_scene(c, scene_file);
  const int t = t_obs.value_or(scene.num_timesteps - 1);
  if (t < 0 || t >= scene.num_timesteps) throw ConfigError("--t-obs outside the scene");
  with_precision(c.precision, [&]<typename T>() {
    const auto w = load_weights<T>(checkpoint);
    const SceneContext ctx(scene, w.config);
    std::mt19937_64 rng(c.seed);
    const auto batch = predict(w, ctx, t, n_samples, mode, rng, true);
    std::filesystem::create_directories(c.out);
    write_file(c.out / kSamplesFile, samples_jsonl(batch, t));
    out << "wrote " << batch.size() << " agents x " << n_samples << " samples to " << (c.out / kSamplesFile).string() << '\n';
  });
}

// ---------------------------------------------------------------- plot

struct SampleRecord {
  int agent_id = 0;
  int z = 0;
  int t_obs = 0;
  std::vector<Vec2> positions;
};

inline std::vector<SampleRecord> read_samples(const std::filesystem::path& path) {
  require_file(path, "samples file");
  std::istringstream in(read_text_file(path));
  std::vector<SampleRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      SampleRecord r;
      r.agent_id = j.at("agent_id").get<int>();
      r.z = j.at("z").get<int>();
      r.t_obs = j.at("t_obs").get<int>();
      for (const auto& p : j.at("positions")) r.positions.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    }
  }
  if (out.empty()) throw DataError("no samples in " + path.string());
  return out;
}

inline const char* z_color(int z) {
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
                                  "#bcbd22", "#17becf", "#393b79", "#637939", "#8c6d31", "#843c39", "#7b4173", "#3182bd"};
  return palette[static_cast<std::size_t>(z) % std::size(palette)];
}

// History (black), ground truth (grey, dashed) and samples colored by z.
inline std::string render_svg(const SceneTimeline& scene, const std::vector<SampleRecord>& samples) {
  if (samples.empty()) throw DataError("nothing to plot: no samples");
  int t_obs = 0;
  for (const auto& s : samples) t_obs = std::max(t_obs, s.t_obs);

  std::map<int, std::vector<Vec2>> history, truth;
  for (const auto& [id, track] : scene.agents)
    for (const auto& seg : track.segments)
      for (std::size_t k = 0; k < seg.states.size(); ++k) {
        const int t = seg.start + static_cast<int>(k);
        (t <= t_obs ? history : truth)[id].push_back(seg.states[k].position);
      }

  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  auto extend = [&](Vec2 p) {
    x0 = std::min(x0, p.x), y0 = std::min(y0, p.y), x1 = std::max(x1, p.x), y1 = std::max(y1, p.y);
  };
  for (const auto& m : {&history, &truth})
    for (const auto& [id, pts] : *m)
      for (auto p : pts) extend(p);
  for (const auto& s : samples)
    for (auto p : s.positions) extend(p);
  const double size = 800.0, margin = 20.0;
  const double span = std::max({x1 - x0, y1 - y0, 1e-6});
  const double k = (size - 2 * margin) / span;
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return std::string(buf);
  };
  auto points = [&](const std::vector<Vec2>& pts) {
    std::string s;
    for (std::size_t i = 0; i < pts.size(); ++i)
      s += (i ? " " : "") + fmt(margin + (pts[i].x - x0) * k) + "," + fmt(size - margin - (pts[i].y - y0) * k);
    return s;
  };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"800\" viewBox=\"0 0 800 800\">\n";
  svg += "<rect width=\"800\" height=\"800\" fill=\"white\"/>\n";
  for (const auto& s : samples) {
    std::vector<Vec2> pts;
    if (auto it = history.find(s.agent_id); it != history.end() && !it->second.empty()) pts.push_back(it->second.back());
    pts.insert(pts.end(), s.positions.begin(), s.positions.end());
    svg += "<polyline class=\"sample\" data-agent=\"" + std::to_string(s.agent_id) + "\" data-z=\"" + std::to_string(s.z) +
           "\" fill=\"none\" stroke=\"" + z_color(s.z) + "\" stroke-opacity=\"0.3\" stroke-width=\"1\" points=\"" + points(pts) + "\"/>\n";
  }
  for (const auto& [id, pts] : truth) {
    std::vector<Vec2> line = pts;
    if (auto it = history.find(id); it != history.end() && !it->second.empty()) line.insert(line.begin(), it->second.back());
    svg += "<polyline class=\"truth\" data-agent=\"" + std::to_string(id) +
           "\" fill=\"none\" stroke=\"#999999\" stroke-dasharray=\"4 3\" stroke-width=\"2\" points=\"" + points(line) + "\"/>\n";
  }
  for (const auto& [id, pts] : history)
    svg += "<polyline class=\"history\" data-agent=\"" + std::to_string(id) +
           "\" fill=\"none\" stroke=\"#000000\" stroke-width=\"2\" points=\"" + points(pts) + "\"/>\n";
  svg += "</svg>\n";
  return svg;
}

inline void cmd_plot(const RunConfig& c, const std::filesystem::path& samples_file, const std::filesystem::path& scene_file,
                     std::ostream& out = std::cout) {
  const auto samples = read_samples(samples_file);
  const SceneTimeline scene = load_scene(c, scene_file);
  const std::string svg = render_svg(scene, samples);
  std::filesystem::create_directories(c.out);
  write_file(c.out / kPlotFile, svg);
  out << "wrote " << (c.out / kPlotFile).string() << '\n';
}

// ---------------------------------------------------------------- bench

inline void cmd_bench(const RunConfig& c, const std::filesystem::path& checkpoint, int n_samples, int repetitions,
                      std::ostream& out = std::cout) {
  c.validate();
  require_file(checkpoint, "checkpoint");
  const auto scenes = test_scenes(c);
  with_precision(c.precision, [&]<typename T>() {
    const auto w = load_compatible<T>(c, checkpoint);
    prepare_output(c);
    std::string csv = "scene,agents,t_obs,measure,mean_s,std_s,median_s\n";
    for (const auto& scene : scenes) {
      const auto r = eval::runtime_benchmark(w, scene, n_samples, repetitions, c.seed);
      auto row = [&](const char* what, const eval::Timing& t) {
        csv += r.scene + "," + std::to_string(r.agents) + "," + std::to_string(r.t_obs) + "," + what + "," +
               format_double(t.mean) + "," + format_double(t.stddev) + "," + format_double(t.median) + "\n";
      };
      row("full", r.full);
      row("z_best", r.z_best);
      row("online_step", r.online_step);
      row("batch_encode", r.batch_encode);
      out << r.scene << ": full " << r.full.mean << " s, z_best " << r.z_best.mean << " s, incremental speedup "
          << r.incremental_ratio() << "x\n";
    }
    write_file(c.out / kRuntimeFile, csv);
  });
}

}  // namespace trajectron::cli
