#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "trajectron/dataio.hpp"
#include "trajectron/graph.hpp"
#include "trajectron/model/config.hpp"

namespace trajectron {

// Encoder inputs of one agent at one timestep. neighbor_sum and modulation hold one
// entry per edge type seen from the agent (ModelConfig::edge_types_for).
struct EncoderStep {
  StateVector node{};
  std::vector<StateVector> neighbor_sum;
  std::vector<double> modulation;
};

inline std::size_t node_type_index(const ModelConfig& cfg, const std::string& type) {
  auto it = std::find(cfg.node_types.begin(), cfg.node_types.end(), type);
  if (it == cfg.node_types.end()) throw ConfigError("unknown node type '" + type + "'");
  return static_cast<std::size_t>(it - cfg.node_types.begin());
}

// Graph, edge mask and modulation tensor precomputed for a whole scene.
class SceneContext {
 public:
  SceneContext(const SceneTimeline& scene, const ModelConfig& cfg)
      : scene_(&scene), graph_(build_graph_history(scene, cfg.radius)), filters_(cfg.filters) {
    modulation_ = compute_modulation_tensor(graph_.mask, filters_);
    partners_.resize(graph_.mask.num_agents());
    for (const auto& [pair, on] : graph_.mask.active_pairs()) {
      partners_[pair.first].push_back(pair.second);
      partners_[pair.second].push_back(pair.first);
    }
    for (auto& p : partners_) std::sort(p.begin(), p.end());
  }

  const SceneTimeline& scene() const { return *scene_; }
  const GraphHistory& graph() const { return graph_; }
  const ModulationTensor& modulation() const { return modulation_; }

  // Neighbors contributing state at t: connected now, or disconnected within the
  // removal support and still present. Modulation sums cover every partner.
  EncoderStep step_input(int agent_id, int t, const Standardizer& standardizer, const ModelConfig& cfg) const {
    const auto& agents = scene_->agents;
    const AgentTrack& track = agents.at(agent_id);
    const AgentState* self = track.state_at(t);
    if (!self) throw DataError("agent " + std::to_string(agent_id) + " is not present at timestep " + std::to_string(t));
    const std::size_t K = cfg.node_types.size();
    EncoderStep step;
    step.node = standardizer.transform(*self);
    step.neighbor_sum.assign(K, StateVector{});
    step.modulation.assign(K, 0.0);
    const int i = graph_.mask.index_of(agent_id);
    const auto& ids = graph_.mask.agent_ids();
    for (int j : partners_[i]) {
      const AgentTrack& other = agents.at(ids[j]);
      const std::size_t k = node_type_index(cfg, other.type);
      step.modulation[k] += modulation_.at(t, i, j);
      const AgentState* s = other.state_at(t);
      if (!s) continue;
      if (graph_.mask.at(i, j, t) || within_removal_window(graph_.mask, i, j, t, filters_)) {
        const auto f = standardizer.transform(*s);
        for (std::size_t c = 0; c < kStateDim; ++c) step.neighbor_sum[k][c] += f[c];
      }
    }
    for (auto& m : step.modulation) m = std::min(m, 1.0);
    return step;
  }

  // Number of consecutive observed steps ending at t (0 if absent at t).
  int history_available(int agent_id, int t) const {
    const Segment* seg = scene_->agents.at(agent_id).segment_at(t);
    return seg ? t - seg->start + 1 : 0;
  }

  int future_available(int agent_id, int t) const {
    const Segment* seg = scene_->agents.at(agent_id).segment_at(t);
    return seg ? seg->end() - t : 0;
  }

 private:
  const SceneTimeline* scene_;
  GraphHistory graph_;
  FilterPair filters_;
  ModulationTensor modulation_;
  std::vector<std::vector<int>> partners_;
};

}  // namespace trajectron
