#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "trajectron/core.hpp"

namespace trajectron {

// Upper bound on human speed (m/s), the current footspeed world record.
inline constexpr double kMaxSpeed = 12.42;
inline constexpr double kDefaultDt = 0.4;
inline constexpr const char* kDefaultNodeType = "PEDESTRIAN";

struct RawFrame {
  int frame = 0;
  double x = 0.0;
  double y = 0.0;
};

struct RawTrack {
  int agent_id = 0;
  std::vector<RawFrame> frames;
};

inline constexpr std::size_t kStateDim = 6;
using StateVector = std::array<double, kStateDim>;

struct AgentState {
  Vec2 position;
  Vec2 velocity;
  Vec2 acceleration;

  StateVector features() const {
    return {position.x, position.y, velocity.x, velocity.y, acceleration.x, acceleration.y};
  }
  static AgentState from_features(const StateVector& f) {
    return {{f[0], f[1]}, {f[2], f[3]}, {f[4], f[5]}};
  }
  friend bool operator==(const AgentState&, const AgentState&) = default;
};

// Contiguous run of timesteps on which an agent is observed.
struct Segment {
  int start = 0;
  std::vector<AgentState> states;

  int end() const { return start + static_cast<int>(states.size()) - 1; }
  bool contains(int t) const { return t >= start && t <= end(); }
  friend bool operator==(const Segment&, const Segment&) = default;
};

struct AgentTrack {
  int id = 0;
  std::string type = kDefaultNodeType;
  std::vector<Segment> segments;

  const Segment* segment_at(int t) const {
    for (const auto& s : segments)
      if (s.contains(t)) return &s;
    return nullptr;
  }
  const AgentState* state_at(int t) const {
    const Segment* s = segment_at(t);
    return s ? &s->states[t - s->start] : nullptr;
  }
  bool present(int t) const { return segment_at(t) != nullptr; }
  friend bool operator==(const AgentTrack&, const AgentTrack&) = default;
};

struct SceneTimeline {
  std::string name;
  double dt = kDefaultDt;
  int stride = 1;
  int first_frame = 0;
  int num_timesteps = 0;
  std::map<int, AgentTrack> agents;

  // Agents present at timestep t, ordered by id.
  std::vector<int> present_at(int t) const {
    std::vector<int> ids;
    for (const auto& [id, track] : agents)
      if (track.present(t)) ids.push_back(id);
    return ids;
  }
  friend bool operator==(const SceneTimeline&, const SceneTimeline&) = default;
};

inline Vec2 clamp_speed(Vec2 v, double max_speed = kMaxSpeed) {
  const double speed = v.norm();
  if (speed <= max_speed) return v;
  return v * (max_speed / speed);
}

// Backward differences with the head replicated from the second entry; velocity is
// clamped to kMaxSpeed and acceleration is derived from the clamped velocity.
inline std::vector<AgentState> differentiate_states(std::span<const Vec2> positions, double dt) {
  if (!(dt > 0.0)) throw DataError("dt must be positive");
  if (positions.size() < 2) throw DataError("at least two positions are needed to differentiate a track");
  const std::size_t n = positions.size();
  std::vector<AgentState> states(n);
  for (std::size_t k = 0; k < n; ++k) states[k].position = positions[k];
  for (std::size_t k = 1; k < n; ++k) states[k].velocity = clamp_speed((positions[k] - positions[k - 1]) / dt);
  states[0].velocity = states[1].velocity;
  for (std::size_t k = 1; k < n; ++k) states[k].acceleration = (states[k].velocity - states[k - 1].velocity) / dt;
  states[0].acceleration = states[1].acceleration;
  return states;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline bool parse_double(std::string_view tok, double& out) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc() && res.ptr == tok.data() + tok.size() && std::isfinite(out);
}

inline bool parse_integral(std::string_view tok, int& out) {
  double v = 0.0;
  if (!parse_double(tok, v)) return false;
  if (v != std::floor(v) || std::abs(v) > 2e9) return false;
  out = static_cast<int>(v);
  return true;
}

}  // namespace detail

// Parses "frame agent_id x y" lines. Returns tracks sorted by agent id, frames ascending.
inline std::vector<RawTrack> parse_tracks(std::string_view text) {
  std::map<int, std::vector<RawFrame>> by_agent;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const auto line = detail::trim(raw);
    if (line.empty() || line.front() == '#') continue;

    std::array<std::string_view, 4> tok;
    std::size_t count = 0;
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
      if (i >= line.size()) break;
      const auto start = i;
      while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
      if (count < 4) tok[count] = line.substr(start, i - start);
      ++count;
    }
    if (count != 4) throw ParseError(line_no, "expected 4 fields, found " + std::to_string(count));
    RawFrame f;
    int agent = 0;
    if (!detail::parse_integral(tok[0], f.frame)) throw ParseError(line_no, "bad frame index '" + std::string(tok[0]) + "'");
    if (!detail::parse_integral(tok[1], agent)) throw ParseError(line_no, "bad agent id '" + std::string(tok[1]) + "'");
    if (!detail::parse_double(tok[2], f.x)) throw ParseError(line_no, "bad x '" + std::string(tok[2]) + "'");
    if (!detail::parse_double(tok[3], f.y)) throw ParseError(line_no, "bad y '" + std::string(tok[3]) + "'");
    by_agent[agent].push_back(f);
  }

  std::vector<RawTrack> tracks;
  for (auto& [id, frames] : by_agent) {
    std::sort(frames.begin(), frames.end(), [](const RawFrame& a, const RawFrame& b) { return a.frame < b.frame; });
    for (std::size_t k = 1; k < frames.size(); ++k)
      if (frames[k].frame == frames[k - 1].frame)
        throw DataError("agent " + std::to_string(id) + " has frame " + std::to_string(frames[k].frame) + " twice");
    tracks.push_back({id, std::move(frames)});
  }
  return tracks;
}

// stride == 0 infers the stride as the gcd of all frame offsets. Single-frame
// presence intervals cannot be differentiated and are dropped with a notice.
inline SceneTimeline build_timeline(const std::vector<RawTrack>& tracks, double dt, int stride = 0,
                                    const std::string& node_type = kDefaultNodeType, std::string name = {}) {
  if (!(dt > 0.0)) throw ConfigError("dt must be positive");
  if (stride < 0) throw ConfigError("stride must be nonnegative");
  SceneTimeline scene;
  scene.name = std::move(name);
  scene.dt = dt;
  if (tracks.empty()) return scene;

  int first = tracks.front().frames.front().frame;
  int last = first;
  for (const auto& t : tracks)
    for (const auto& f : t.frames) {
      first = std::min(first, f.frame);
      last = std::max(last, f.frame);
    }
  if (stride == 0) {
    int g = 0;
    for (const auto& t : tracks)
      for (const auto& f : t.frames) g = std::gcd(g, f.frame - first);
    stride = g == 0 ? 1 : g;
  }
  scene.stride = stride;
  scene.first_frame = first;
  scene.num_timesteps = (last - first) / stride + 1;

  for (const auto& t : tracks) {
    std::vector<std::vector<std::pair<int, Vec2>>> runs;
    for (const auto& f : t.frames) {
      if ((f.frame - first) % stride != 0)
        throw DataError("agent " + std::to_string(t.agent_id) + " frame " + std::to_string(f.frame) +
                        " is not on the frame stride " + std::to_string(stride));
      const int step = (f.frame - first) / stride;
      if (runs.empty() || runs.back().back().first + 1 != step) runs.emplace_back();
      runs.back().push_back({step, {f.x, f.y}});
    }
    AgentTrack track;
    track.id = t.agent_id;
    track.type = node_type;
    for (const auto& run : runs) {
      if (run.size() < 2) {
        notice("agent " + std::to_string(t.agent_id) + ": dropping single-frame presence at timestep " +
               std::to_string(run.front().first));
        continue;
      }
      std::vector<Vec2> pos;
      pos.reserve(run.size());
      for (const auto& [step, p] : run) pos.push_back(p);
      track.segments.push_back({run.front().first, differentiate_states(pos, dt)});
    }
    if (!track.segments.empty()) scene.agents.emplace(t.agent_id, std::move(track));
  }
  return scene;
}

inline SceneTimeline ingest_dataset(std::string_view text, double dt = kDefaultDt, int stride = 0,
                                    const std::string& node_type = kDefaultNodeType, std::string name = {}) {
  return build_timeline(parse_tracks(text), dt, stride, node_type, std::move(name));
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline SceneTimeline ingest_file(const std::filesystem::path& path, double dt = kDefaultDt, int stride = 0) {
  return ingest_dataset(read_text_file(path), dt, stride, kDefaultNodeType, path.stem().string());
}

// Channel-wise standardization of the 6 state channels.
class Standardizer {
 public:
  static constexpr double kStdFloor = 1e-6;

  Standardizer() { std_.fill(1.0); mean_.fill(0.0); }
  Standardizer(const StateVector& mean, const StateVector& std) : mean_(mean), std_(std) { apply_floor(); }

  // Fit over every state of the training scenes only.
  static Standardizer fit(std::span<const SceneTimeline> train) {
    StateVector sum{}, sq{};
    double n = 0.0;
    for (const auto& scene : train)
      for (const auto& [id, track] : scene.agents)
        for (const auto& seg : track.segments)
          for (const auto& s : seg.states) {
            const auto f = s.features();
            for (std::size_t c = 0; c < kStateDim; ++c) sum[c] += f[c];
            n += 1.0;
          }
    StateVector mean{}, std{};
    if (n == 0.0) return Standardizer();
    for (std::size_t c = 0; c < kStateDim; ++c) mean[c] = sum[c] / n;
    for (const auto& scene : train)
      for (const auto& [id, track] : scene.agents)
        for (const auto& seg : track.segments)
          for (const auto& s : seg.states) {
            const auto f = s.features();
            for (std::size_t c = 0; c < kStateDim; ++c) sq[c] += (f[c] - mean[c]) * (f[c] - mean[c]);
          }
    for (std::size_t c = 0; c < kStateDim; ++c) std[c] = std::sqrt(sq[c] / n);
    return Standardizer(mean, std);
  }

  StateVector transform(const StateVector& v) const {
    StateVector out;
    for (std::size_t c = 0; c < kStateDim; ++c) out[c] = (v[c] - mean_[c]) / std_[c];
    return out;
  }
  StateVector inverse(const StateVector& v) const {
    StateVector out;
    for (std::size_t c = 0; c < kStateDim; ++c) out[c] = v[c] * std_[c] + mean_[c];
    return out;
  }
  StateVector transform(const AgentState& s) const { return transform(s.features()); }

  const StateVector& mean() const { return mean_; }
  const StateVector& stddev() const { return std_; }

 private:
  void apply_floor() {
    static constexpr const char* kNames[] = {"x", "y", "vx", "vy", "ax", "ay"};
    for (std::size_t c = 0; c < kStateDim; ++c)
      if (!(std_[c] >= kStdFloor)) {
        notice(std::string("standardizer: channel ") + kNames[c] + " has std below 1e-6, flooring");
        std_[c] = kStdFloor;
      }
  }

  StateVector mean_;
  StateVector std_;
};

// ---------------------------------------------------------------- synthetic data

struct ForkOptions {
  double noise_std = 0.0;
  double speed = 1.0;
  double dt = kDefaultDt;
  int neighbors = 0;
  std::uint64_t seed = 0;
};

inline constexpr int kForkApproachSteps = 8;
inline constexpr int kForkBranchSteps = 12;

// Agent 0 walks +x for 8 steps, then turns 45 degrees left or right for 12 steps.
inline std::vector<SceneTimeline> make_synthetic_fork(int n_scenes, const ForkOptions& opt = {}) {
  if (opt.noise_std < 0.0) throw ConfigError("noise_std must be nonnegative");
  std::mt19937_64 rng(opt.seed);
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double step = opt.speed * opt.dt;
  const double diag = step / std::sqrt(2.0);
  const int total = kForkApproachSteps + kForkBranchSteps;

  std::vector<SceneTimeline> scenes;
  scenes.reserve(n_scenes);
  for (int s = 0; s < n_scenes; ++s) {
    const double side = coin(rng) ? 1.0 : -1.0;
    std::vector<std::vector<Vec2>> paths;
    std::vector<Vec2> walker(total);
    for (int k = 0; k < total; ++k) {
      if (k < kForkApproachSteps)
        walker[k] = {step * k, 0.0};
      else {
        const int j = k - (kForkApproachSteps - 1);
        walker[k] = {step * (kForkApproachSteps - 1) + diag * j, side * diag * j};
      }
    }
    paths.push_back(std::move(walker));
    for (int n = 0; n < opt.neighbors; ++n) {
      std::vector<Vec2> other(total);
      const double lane = 2.5 * (n + 1) * (n % 2 == 0 ? 1.0 : -1.0);
      for (int k = 0; k < total; ++k) other[k] = {step * (total - 1 - k), lane};
      paths.push_back(std::move(other));
    }

    SceneTimeline scene;
    scene.name = "fork_" + std::to_string(s);
    scene.dt = opt.dt;
    scene.num_timesteps = total;
    for (std::size_t a = 0; a < paths.size(); ++a) {
      auto& path = paths[a];
      if (opt.noise_std > 0.0)
        for (auto& p : path) p += Vec2{noise(rng) * opt.noise_std, noise(rng) * opt.noise_std};
      AgentTrack track;
      track.id = static_cast<int>(a);
      track.segments.push_back({0, differentiate_states(path, opt.dt)});
      scene.agents.emplace(track.id, std::move(track));
    }
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

// One agent moving at constant velocity for `steps` timesteps.
inline SceneTimeline make_constant_velocity_scene(Vec2 velocity, int steps, Vec2 start = {}, double dt = kDefaultDt) {
  std::vector<Vec2> path(steps);
  for (int k = 0; k < steps; ++k) path[k] = start + velocity * (dt * k);
  SceneTimeline scene;
  scene.name = "constant_velocity";
  scene.dt = dt;
  scene.num_timesteps = steps;
  AgentTrack track;
  track.segments.push_back({0, differentiate_states(path, dt)});
  scene.agents.emplace(0, std::move(track));
  return scene;
}

// ---------------------------------------------------------------- splits

struct NamedDataset {
  std::string name;
  std::vector<SceneTimeline> scenes;
};

struct Fold {
  std::string held_out;
  std::vector<SceneTimeline> train;
  std::vector<SceneTimeline> test;
};

inline std::vector<Fold> leave_one_out_splits(const std::vector<NamedDataset>& sets) {
  if (sets.size() < 2) throw ConfigError("leave-one-out needs at least two datasets");
  std::set<std::string> names;
  for (const auto& s : sets)
    if (!names.insert(s.name).second) throw ConfigError("duplicate dataset name '" + s.name + "'");
  std::vector<Fold> folds;
  for (std::size_t held = 0; held < sets.size(); ++held) {
    Fold f;
    f.held_out = sets[held].name;
    f.test = sets[held].scenes;
    for (std::size_t k = 0; k < sets.size(); ++k)
      if (k != held) f.train.insert(f.train.end(), sets[k].scenes.begin(), sets[k].scenes.end());
    folds.push_back(std::move(f));
  }
  return folds;
}

// ---------------------------------------------------------------- manifest

struct DatasetManifest {
  double dt = kDefaultDt;
  int stride = 0;
  std::vector<std::pair<std::string, std::filesystem::path>> splits;
};

// key=value lines: dt, stride, split.<name> = <path relative to the manifest>.
inline DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir = {}) {
  DatasetManifest m;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = detail::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(line_no, "expected key=value");
    const std::string key(detail::trim(line.substr(0, eq)));
    const std::string value(detail::trim(line.substr(eq + 1)));
    if (key == "dt") {
      if (!detail::parse_double(value, m.dt) || m.dt <= 0.0) throw ParseError(line_no, "bad dt");
    } else if (key == "stride") {
      if (!detail::parse_integral(value, m.stride) || m.stride < 0) throw ParseError(line_no, "bad stride");
    } else if (key.rfind("split.", 0) == 0 && key.size() > 6) {
      m.splits.emplace_back(key.substr(6), base_dir / value);
    } else {
      throw ParseError(line_no, "unknown manifest key '" + key + "'");
    }
  }
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_text_file(path), path.parent_path());
}

inline std::vector<NamedDataset> load_datasets(const DatasetManifest& m) {
  std::vector<NamedDataset> sets;
  for (const auto& [name, path] : m.splits) {
    if (!std::filesystem::exists(path)) throw ConfigError("dataset file not found: " + path.string());
    auto scene = ingest_dataset(read_text_file(path), m.dt, m.stride, kDefaultNodeType, name);
    sets.push_back({name, {std::move(scene)}});
  }
  return sets;
}

}  // namespace trajectron
