#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "trajectron/core.hpp"
#include "trajectron/dataio.hpp"

namespace trajectron {

inline constexpr double kDefaultRadius = 3.0;

// Unordered pair of node types, stored sorted.
struct EdgeType {
  std::string first;
  std::string second;

  EdgeType() = default;
  EdgeType(std::string a, std::string b) : first(std::move(a)), second(std::move(b)) {
    if (second < first) std::swap(first, second);
  }
  std::string name() const { return first + "-" + second; }
  bool involves(const std::string& t) const { return first == t || second == t; }
  // Type at the far end of an edge whose near endpoint has type `t`.
  const std::string& other(const std::string& t) const { return first == t ? second : first; }
  friend auto operator<=>(const EdgeType&, const EdgeType&) = default;
};

// Addition filter A (indexed by edge age) and removal filter R (indexed by time since removal).
// Beyond its support A is 1 and R is 0. Values are clipped to [0, 1] on evaluation.
struct FilterPair {
  std::vector<double> add;
  std::vector<double> remove;

  static FilterPair defaults() { return {{0.0, 0.2, 0.4, 0.6, 0.8, 1.0}, {1.0, 0.0}}; }

  double add_at(long age) const {
    if (age < 0) return 0.0;
    if (age >= static_cast<long>(add.size())) return 1.0;
    return std::clamp(add[age], 0.0, 1.0);
  }
  double remove_at(long elapsed) const {
    if (elapsed < 0) return 1.0;
    if (elapsed >= static_cast<long>(remove.size())) return 0.0;
    return std::clamp(remove[elapsed], 0.0, 1.0);
  }
  long add_support() const { return static_cast<long>(add.size()); }
  long remove_support() const { return static_cast<long>(remove.size()); }

  // Smallest age whose addition factor reaches `factor`; lets a re-added edge resume
  // its ramp without a jump.
  long resume_age(double factor) const {
    for (long a = 0; a < add_support(); ++a)
      if (add_at(a) >= factor) return a;
    return add_support();
  }

  void validate() const {
    for (double v : add)
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("addition filter values must lie in [0,1]");
    for (double v : remove)
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("removal filter values must lie in [0,1]");
    for (std::size_t k = 1; k < add.size(); ++k)
      if (add[k] < add[k - 1]) throw ConfigError("addition filter must be nondecreasing");
    for (std::size_t k = 1; k < remove.size(); ++k)
      if (remove[k] > remove[k - 1]) throw ConfigError("removal filter must be nonincreasing");
  }
};

using AgentPair = std::pair<int, int>;

inline AgentPair ordered_pair(int a, int b) { return a < b ? AgentPair{a, b} : AgentPair{b, a}; }

// Binary tensor E of shape (N, N, T). Only pairs that are ever connected are stored.
class EdgeMask {
 public:
  EdgeMask() = default;
  EdgeMask(std::vector<int> agent_ids, int num_steps) : ids_(std::move(agent_ids)), steps_(num_steps) {
    for (std::size_t k = 0; k < ids_.size(); ++k) index_[ids_[k]] = static_cast<int>(k);
  }

  int num_agents() const { return static_cast<int>(ids_.size()); }
  int num_steps() const { return steps_; }
  const std::vector<int>& agent_ids() const { return ids_; }
  int index_of(int agent_id) const {
    auto it = index_.find(agent_id);
    return it == index_.end() ? -1 : it->second;
  }

  bool at(int i, int j, int t) const {
    if (i == j) return false;
    auto it = pairs_.find(ordered_pair(i, j));
    return it != pairs_.end() && it->second[t] != 0;
  }
  void set(int i, int j, int t, bool on) {
    if (i == j) return;
    auto key = ordered_pair(i, j);
    auto it = pairs_.find(key);
    if (it == pairs_.end()) {
      if (!on) return;
      it = pairs_.emplace(key, std::vector<std::uint8_t>(steps_, 0)).first;
    }
    it->second[t] = on ? 1 : 0;
  }
  // (i, j) index pairs with i < j that are connected at least once.
  const std::map<AgentPair, std::vector<std::uint8_t>>& active_pairs() const { return pairs_; }

 private:
  std::vector<int> ids_;
  std::map<int, int> index_;
  int steps_ = 0;
  std::map<AgentPair, std::vector<std::uint8_t>> pairs_;
};

// Real tensor M of shape (T, N, N), stored sparsely over pairs that were ever connected.
class ModulationTensor {
 public:
  ModulationTensor() = default;
  ModulationTensor(int num_agents, int num_steps) : n_(num_agents), steps_(num_steps) {}

  int num_agents() const { return n_; }
  int num_steps() const { return steps_; }
  double at(int t, int i, int j) const {
    if (i == j) return 0.0;
    auto it = pairs_.find(ordered_pair(i, j));
    return it == pairs_.end() ? 0.0 : it->second[t];
  }
  std::vector<double>& series(int i, int j) {
    auto key = ordered_pair(i, j);
    auto it = pairs_.find(key);
    if (it == pairs_.end()) it = pairs_.emplace(key, std::vector<double>(steps_, 0.0)).first;
    return it->second;
  }
  const std::map<AgentPair, std::vector<double>>& pairs() const { return pairs_; }

 private:
  int n_ = 0;
  int steps_ = 0;
  std::map<AgentPair, std::vector<double>> pairs_;
};

struct GraphSnapshot {
  int timestep = 0;
  std::vector<std::pair<int, std::string>> nodes;
  std::map<std::pair<int, EdgeType>, std::vector<int>> typed_neighbors;

  const std::vector<int>& neighbors(int agent, const EdgeType& k) const {
    static const std::vector<int> kEmpty;
    auto it = typed_neighbors.find({agent, k});
    return it == typed_neighbors.end() ? kEmpty : it->second;
  }
};

struct GraphHistory {
  std::vector<GraphSnapshot> snapshots;
  EdgeMask mask;
};

// Adjacency of the agents present at one timestep: edge iff distance <= radius.
inline std::set<AgentPair> proximity_edges(const std::vector<std::pair<int, Vec2>>& positions, double radius) {
  std::set<AgentPair> edges;
  for (std::size_t a = 0; a < positions.size(); ++a)
    for (std::size_t b = a + 1; b < positions.size(); ++b)
      if (distance(positions[a].second, positions[b].second) <= radius)
        edges.insert(ordered_pair(positions[a].first, positions[b].first));
  return edges;
}

inline GraphHistory build_graph_history(const SceneTimeline& scene, double radius = kDefaultRadius) {
  if (!(radius > 0.0)) throw ConfigError("radius must be positive");
  std::vector<int> ids;
  for (const auto& [id, track] : scene.agents) ids.push_back(id);
  GraphHistory g;
  g.mask = EdgeMask(ids, scene.num_timesteps);
  g.snapshots.resize(scene.num_timesteps);
  for (int t = 0; t < scene.num_timesteps; ++t) {
    auto& snap = g.snapshots[t];
    snap.timestep = t;
    std::vector<std::pair<int, Vec2>> present;
    for (const auto& [id, track] : scene.agents)
      if (const AgentState* s = track.state_at(t)) {
        present.push_back({id, s->position});
        snap.nodes.push_back({id, track.type});
      }
    for (const auto& [a, b] : proximity_edges(present, radius)) {
      g.mask.set(g.mask.index_of(a), g.mask.index_of(b), t, true);
      const auto& ta = scene.agents.at(a).type;
      const auto& tb = scene.agents.at(b).type;
      const EdgeType k(ta, tb);
      snap.typed_neighbors[{a, k}].push_back(b);
      snap.typed_neighbors[{b, k}].push_back(a);
    }
    for (auto& [key, v] : snap.typed_neighbors) std::sort(v.begin(), v.end());
  }
  return g;
}

// Direct evaluation of A(age) over each connected run and of the scaled R(elapsed)
// over each disconnected run that follows a connection.
inline ModulationTensor compute_modulation_tensor(const EdgeMask& mask, const FilterPair& filters) {
  ModulationTensor m(mask.num_agents(), mask.num_steps());
  const int steps = mask.num_steps();
  for (const auto& [pair, on] : mask.active_pairs()) {
    auto& out = m.series(pair.first, pair.second);
    double before = 0.0;
    int t = 0;
    while (t < steps) {
      int end = t;
      while (end + 1 < steps && on[end + 1] == on[t]) ++end;
      if (on[t]) {
        const long start_age = filters.resume_age(before);
        for (int u = t; u <= end; ++u) out[u] = filters.add_at(start_age + (u - t));
      } else {
        for (int u = t; u <= end; ++u) out[u] = filters.remove_at(u - t) * before;
      }
      before = out[end];
      t = end + 1;
    }
  }
  return m;
}

// Per-pair counters advanced once per timestep at test time.
struct PairCounter {
  bool active = false;
  long age = 0;
  long elapsed = 0;
  double removal_factor = 0.0;
  double factor = 0.0;
};

inline void advance_counter(PairCounter& c, bool connected, const FilterPair& filters) {
  if (connected) {
    c.age = c.active ? c.age + 1 : filters.resume_age(c.factor);
    c.active = true;
    c.factor = filters.add_at(c.age);
  } else {
    if (c.active) {
      c.elapsed = 0;
      c.removal_factor = c.factor;
      c.active = false;
    } else {
      c.elapsed = std::min(c.elapsed + 1, filters.remove_support());
    }
    c.factor = filters.remove_at(c.elapsed) * c.removal_factor;
  }
}

// Counter state keyed by agent-id pairs, for scenes whose membership changes online.
class OnlineModulation {
 public:
  explicit OnlineModulation(FilterPair filters = FilterPair::defaults()) : filters_(std::move(filters)) {}

  // Advance every tracked pair by one step given the current adjacency, and start
  // tracking newly connected pairs.
  void step(const std::set<AgentPair>& current_edges) {
    for (const auto& e : current_edges) counters_.try_emplace(e);
    for (auto it = counters_.begin(); it != counters_.end();) {
      advance_counter(it->second, current_edges.count(it->first) > 0, filters_);
      if (!it->second.active && it->second.factor == 0.0 && it->second.elapsed >= filters_.remove_support())
        it = counters_.erase(it);
      else
        ++it;
    }
  }

  double factor(int a, int b) const {
    auto it = counters_.find(ordered_pair(a, b));
    return it == counters_.end() ? 0.0 : it->second.factor;
  }
  bool connected(int a, int b) const {
    auto it = counters_.find(ordered_pair(a, b));
    return it != counters_.end() && it->second.active;
  }
  // Disconnected within the removal support: the pair still contributes a fading influence.
  bool fading(int a, int b) const {
    auto it = counters_.find(ordered_pair(a, b));
    return it != counters_.end() && !it->second.active && it->second.elapsed < filters_.remove_support();
  }
  const std::map<AgentPair, PairCounter>& counters() const { return counters_; }
  const FilterPair& filters() const { return filters_; }

 private:
  FilterPair filters_;
  std::map<AgentPair, PairCounter> counters_;
};

// One N x N slice from the previous counters and the current adjacency (dense index form).
inline std::vector<std::vector<double>> online_modulation_slice(const std::vector<std::vector<bool>>& adjacency,
                                                                std::map<AgentPair, PairCounter>& counters,
                                                                const FilterPair& filters) {
  const std::size_t n = adjacency.size();
  std::vector<std::vector<double>> slice(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const AgentPair key{static_cast<int>(i), static_cast<int>(j)};
      const bool on = adjacency[i][j];
      auto it = counters.find(key);
      if (it == counters.end()) {
        if (!on) continue;
        it = counters.emplace(key, PairCounter{}).first;
      }
      advance_counter(it->second, on, filters);
      slice[i][j] = slice[j][i] = it->second.factor;
    }
  return slice;
}

// min(sum of pair factors, 1) over the given neighbors of agent i.
inline double aggregate_pair_factors(const ModulationTensor& m, int t, int i, const std::vector<int>& neighbors) {
  double sum = 0.0;
  for (int j : neighbors) sum += m.at(t, i, j);
  return std::min(sum, 1.0);
}

inline double aggregate_factors(const std::vector<double>& factors) {
  double sum = 0.0;
  for (double f : factors) sum += f;
  return std::min(sum, 1.0);
}

// True when pair (i, j) is disconnected at t but was connected within the removal support.
inline bool within_removal_window(const EdgeMask& mask, int i, int j, int t, const FilterPair& filters) {
  if (mask.at(i, j, t)) return false;
  for (long back = 1; back <= filters.remove_support() && t - back >= 0; ++back)
    if (mask.at(i, j, static_cast<int>(t - back))) return true;
  return false;
}

}  // namespace trajectron
