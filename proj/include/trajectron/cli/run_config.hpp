#pragma once

#include <charconv>
#include <filesystem>
#include <string>
#include <vector>

#include "trajectron/dataio.hpp"
#include "trajectron/eval/protocol.hpp"
#include "trajectron/kv.hpp"
#include "trajectron/model/config.hpp"
#include "trajectron/train.hpp"

namespace trajectron::cli {

// Everything a command needs, merged from one key=value file plus command-line overrides.
//
//   seed, precision, out
//   model.<key>   see ModelConfig
//   train.<key>   see TrainConfig
//   eval.samples, eval.best_of (comma list), eval.timestep_stride, eval.baselines,
//   eval.bootstrap_resamples, eval.threads
//   data.manifest (path, relative to the config file), data.fold,
//   data.synthetic = fork | constant_velocity, data.synthetic_scenes,
//   data.synthetic_noise, data.synthetic_neighbors, data.synthetic_seed
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  eval::EvalOptions eval;
  std::filesystem::path manifest;
  std::string fold;
  std::string synthetic;
  int synthetic_scenes = 64;
  double synthetic_noise = 0.02;
  int synthetic_neighbors = 0;
  std::uint64_t synthetic_seed = 0;
  std::uint64_t seed = 0;
  int precision = 32;
  std::filesystem::path out = "out";

  static RunConfig parse(std::string_view text, const std::filesystem::path& base_dir = {}) {
    RunConfig c;
    const auto kv = KeyValues::parse(text);
    for (const auto& [key, v] : kv.entries()) c.apply(key, v, base_dir);
    return c;
  }

  static RunConfig load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
    return parse(read_text_file(path), path.parent_path());
  }

  void apply(const std::string& key, const std::string& v, const std::filesystem::path& base_dir = {}) {
    auto suffix = [&](const char* prefix) { return key.substr(std::string(prefix).size()); };
    auto as_u64 = [&](std::uint64_t& dst) {
      const auto res = std::from_chars(v.data(), v.data() + v.size(), dst);
      if (res.ec != std::errc() || res.ptr != v.data() + v.size()) throw ConfigError("key '" + key + "': expected a nonnegative integer");
    };
    bool ok = true;
    if (key == "seed") as_u64(seed);
    else if (key == "precision") precision = parse_int_value(key, v);
    else if (key == "out") out = base_dir / v;
    else if (key.rfind("model.", 0) == 0) ok = model.apply(suffix("model."), v);
    else if (key.rfind("train.", 0) == 0) ok = train.apply(suffix("train."), v);
    else if (key == "eval.samples") eval.samples = parse_int_value(key, v);
    else if (key == "eval.best_of") {
      eval.best_of.clear();
      for (const auto& s : split_list(v)) eval.best_of.push_back(parse_int_value(key, s));
    } else if (key == "eval.timestep_stride") eval.timestep_stride = parse_int_value(key, v);
    else if (key == "eval.baselines") eval.baselines = parse_bool(key, v);
    else if (key == "eval.bootstrap_resamples") eval.bootstrap_resamples = parse_int_value(key, v);
    else if (key == "eval.threads") eval.threads = parse_int_value(key, v);
    else if (key == "data.manifest") manifest = base_dir / v;
    else if (key == "data.fold") fold = v;
    else if (key == "data.synthetic") synthetic = v;
    else if (key == "data.synthetic_scenes") synthetic_scenes = parse_int_value(key, v);
    else if (key == "data.synthetic_noise") synthetic_noise = parse_double_value(key, v);
    else if (key == "data.synthetic_neighbors") synthetic_neighbors = parse_int_value(key, v);
    else if (key == "data.synthetic_seed") as_u64(synthetic_seed);
    else ok = false;
    if (!ok) throw ConfigError("unknown config key '" + key + "'");
  }

  static bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("key '" + key + "': expected true or false");
  }

  // Values and referenced paths; nothing is created on disk here.
  void validate() const {
    model.validate();
    train.validate();
    eval.validate();
    if (precision != 32 && precision != 64) throw ConfigError("precision must be 32 or 64");
    if (manifest.empty() == synthetic.empty()) throw ConfigError("set exactly one of data.manifest and data.synthetic");
    if (!manifest.empty()) {
      if (!std::filesystem::exists(manifest)) throw ConfigError("dataset manifest not found: " + manifest.string());
      for (const auto& [name, path] : load_manifest(manifest).splits)
        if (!std::filesystem::exists(path)) throw ConfigError("dataset file not found: " + path.string());
    }
    if (!synthetic.empty() && synthetic != "fork" && synthetic != "constant_velocity")
      throw ConfigError("data.synthetic must be 'fork' or 'constant_velocity'");
    if (synthetic_scenes < 1 || synthetic_neighbors < 0 || synthetic_noise < 0.0)
      throw ConfigError("synthetic data settings out of range");
    if (out.empty()) throw ConfigError("an output directory is required");
  }

  // Effective configuration. The output directory is left out because the dump lives
  // inside it; parse(to_text()) reproduces everything else.
  std::string to_text() const {
    KeyValues kv;
    kv.set("seed", std::to_string(seed));
    kv.set("precision", std::to_string(precision));
    model.write(kv, "model.");
    train.write(kv, "train.");
    kv.set("eval.samples", std::to_string(eval.samples));
    std::string bo;
    for (std::size_t k = 0; k < eval.best_of.size(); ++k) bo += (k ? "," : "") + std::to_string(eval.best_of[k]);
    if (!bo.empty()) kv.set("eval.best_of", bo);
    kv.set("eval.timestep_stride", std::to_string(eval.timestep_stride));
    kv.set("eval.baselines", eval.baselines ? "true" : "false");
    kv.set("eval.bootstrap_resamples", std::to_string(eval.bootstrap_resamples));
    kv.set("eval.threads", std::to_string(eval.threads));
    if (!manifest.empty()) kv.set("data.manifest", std::filesystem::absolute(manifest).lexically_normal().string());
    if (!fold.empty()) kv.set("data.fold", fold);
    if (!synthetic.empty()) {
      kv.set("data.synthetic", synthetic);
      kv.set("data.synthetic_scenes", std::to_string(synthetic_scenes));
      kv.set("data.synthetic_noise", format_double(synthetic_noise));
      kv.set("data.synthetic_neighbors", std::to_string(synthetic_neighbors));
      kv.set("data.synthetic_seed", std::to_string(synthetic_seed));
    }
    return kv.to_text();
  }

  // The global seed drives training and evaluation streams.
  TrainConfig train_config() const {
    TrainConfig t = train;
    t.seed = seed;
    t.precision = precision;
    return t;
  }
  eval::EvalOptions eval_options() const {
    eval::EvalOptions e = eval;
    e.seed = seed;
    return e;
  }
};

inline std::vector<SceneTimeline> synthetic_scenes(const RunConfig& c, std::uint64_t seed_offset) {
  if (c.synthetic == "fork") {
    ForkOptions fo;
    fo.noise_std = c.synthetic_noise;
    fo.neighbors = c.synthetic_neighbors;
    fo.dt = c.model.dt;
    fo.seed = c.synthetic_seed + seed_offset;
    return make_synthetic_fork(c.synthetic_scenes, fo);
  }
  // Constant-velocity scenes at distinct headings, one agent each.
  std::vector<SceneTimeline> out;
  const int steps = c.model.history_length + c.model.horizon;
  for (int k = 0; k < c.synthetic_scenes; ++k) {
    const double a = 0.7 * k + 0.3 * static_cast<double>(seed_offset);
    auto s = make_constant_velocity_scene({std::cos(a), std::sin(a)}, steps, {}, c.model.dt);
    s.name = "constant_velocity_" + std::to_string(k);
    out.push_back(std::move(s));
  }
  return out;
}

// Training scenes: every split except the held-out fold, or synthetic scenes.
inline std::vector<SceneTimeline> training_scenes(const RunConfig& c) {
  if (!c.synthetic.empty()) return synthetic_scenes(c, 0);
  const auto manifest = load_manifest(c.manifest);
  const auto sets = load_datasets(manifest);
  if (c.fold.empty()) {
    std::vector<SceneTimeline> all;
    for (const auto& s : sets) all.insert(all.end(), s.scenes.begin(), s.scenes.end());
    return all;
  }
  for (const auto& f : leave_one_out_splits(sets))
    if (f.held_out == c.fold) return f.train;
  throw ConfigError("fold '" + c.fold + "' is not a split of the manifest");
}

// Test scenes: the held-out fold, or a fresh synthetic draw.
inline std::vector<SceneTimeline> test_scenes(const RunConfig& c) {
  if (!c.synthetic.empty()) return synthetic_scenes(c, 1);
  if (c.fold.empty()) throw ConfigError("evaluation on a manifest needs data.fold (or --fold)");
  const auto sets = load_datasets(load_manifest(c.manifest));
  for (const auto& s : sets)
    if (s.name == c.fold) return s.scenes;
  throw ConfigError("fold '" + c.fold + "' is not a split of the manifest");
}

}  // namespace trajectron::cli
