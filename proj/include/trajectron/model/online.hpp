#pragma once

#include <array>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "trajectron/model/trajectron.hpp"

namespace trajectron {

// Recurrent encoder state of one agent, held outside any tape.
template <typename T>
struct RecurrentState {
  Matrix<T> h_node, c_node;
  std::vector<Matrix<T>> h_edge, c_edge;  // aligned with edge_types_for(type)
};

// Encoder readout of one agent as plain matrices (all [1 x d]).
template <typename T>
struct EncoderOutput {
  Matrix<T> h_node;
  std::vector<Matrix<T>> modulated_edges;
  Matrix<T> attention;
  Matrix<T> h_edges;
  Matrix<T> h_enc;
};

// Advances and reads out one agent at a time. Both the online predictor and the
// from-scratch reference encoder go through this class, one row per agent, so the
// arithmetic of each agent does not depend on which other agents are present.
template <typename T>
class EncoderRunner {
 public:
  explicit EncoderRunner(const ModelWeights<T>& w) : w_(&w) {
    for (const auto& type : w.config.node_types) {
      Bundle& b = bundles_[type];
      auto at = [&](const std::string& name) { return &w.at(name); };
      b.nhe = {at(type + "/nhe/weight"), at(type + "/nhe/bias")};
      for (const auto& k : w.config.edge_types_for(type)) b.edges.push_back({at(k.name() + "/ee/weight"), at(k.name() + "/ee/bias")});
      b.attn = {at(names::node(type, "attention", "v")), at(names::node(type, "attention", "w_edge")),
                at(names::node(type, "attention", "w_node"))};
    }
  }

  RecurrentState<T> initial() const {
    const auto& c = w_->config;
    RecurrentState<T> s;
    s.h_node = s.c_node = Matrix<T>::Zero(1, c.nhe_hidden);
    s.h_edge.assign(c.node_types.size(), Matrix<T>::Zero(1, c.ee_hidden));
    s.c_edge = s.h_edge;
    return s;
  }

  void advance(const std::string& type, RecurrentState<T>& s, const EncoderStep& in) const {
    Tape<T> tape(false);
    const NodeVars<T> v = bind_encoder(tape, type);
    const EncoderState<T> next = encoder_step(v, load(tape, s), std::span<const EncoderStep* const>(rows_of(in)));
    s.h_node = next.node.h.value();
    s.c_node = next.node.c.value();
    for (std::size_t k = 0; k < next.edges.size(); ++k) {
      s.h_edge[k] = next.edges[k].h.value();
      s.c_edge[k] = next.edges[k].c.value();
    }
  }

  EncoderOutput<T> readout(const std::string& type, const RecurrentState<T>& s, const std::vector<double>& modulation) const {
    Tape<T> tape(false);
    const NodeVars<T> v = bind_encoder(tape, type);
    Matrix<T> m(1, static_cast<Eigen::Index>(modulation.size()));
    for (std::size_t k = 0; k < modulation.size(); ++k) m(0, k) = static_cast<T>(modulation[k]);
    const Encoding<T> e = encoder_readout(v, load(tape, s), m);
    EncoderOutput<T> out;
    out.h_node = e.h_node.value();
    for (const auto& h : e.modulated_edges) out.modulated_edges.push_back(h.value());
    out.attention = e.attention.value();
    out.h_edges = e.h_edges.value();
    out.h_enc = e.h_enc.value();
    return out;
  }

  const ModelWeights<T>& weights() const { return *w_; }

 private:
  // Parameters the encoder touches, resolved once per node type.
  struct Bundle {
    std::array<const Parameter<T>*, 2> nhe;
    std::vector<std::array<const Parameter<T>*, 2>> edges;
    std::array<const Parameter<T>*, 3> attn;
  };

  // Binds only the encoder part of NodeVars; the decoder fields stay unbound.
  NodeVars<T> bind_encoder(Tape<T>& tape, const std::string& type) const {
    auto it = bundles_.find(type);
    if (it == bundles_.end()) throw ConfigError("unknown node type '" + type + "'");
    const Bundle& b = it->second;
    NodeVars<T> v;
    v.nhe = {tape.param(*b.nhe[0]), tape.param(*b.nhe[1])};
    for (const auto& e : b.edges) v.edges.push_back({tape.param(*e[0]), tape.param(*e[1])});
    v.attn_v = tape.param(*b.attn[0]);
    v.attn_w_edge = tape.param(*b.attn[1]);
    v.attn_w_node = tape.param(*b.attn[2]);
    return v;
  }

  static std::array<const EncoderStep*, 1> rows_of(const EncoderStep& in) { return {&in}; }

  static EncoderState<T> load(Tape<T>& tape, const RecurrentState<T>& s) {
    EncoderState<T> st;
    st.node = {tape.constant(s.h_node), tape.constant(s.c_node)};
    for (std::size_t k = 0; k < s.h_edge.size(); ++k) st.edges.push_back({tape.constant(s.h_edge[k]), tape.constant(s.c_edge[k])});
    return st;
  }

  const ModelWeights<T>* w_;
  std::map<std::string, Bundle> bundles_;
};

// Encodes an agent's whole current segment (up to and including t) from zero state.
template <typename T>
EncoderOutput<T> encode_from_scratch(const EncoderRunner<T>& runner, const SceneContext& ctx, int agent_id, int t) {
  const ModelWeights<T>& w = runner.weights();
  const Segment* seg = ctx.scene().agents.at(agent_id).segment_at(t);
  if (!seg) throw DataError("agent " + std::to_string(agent_id) + " is not present at timestep " + std::to_string(t));
  const std::string& type = ctx.scene().agents.at(agent_id).type;
  RecurrentState<T> s = runner.initial();
  EncoderStep in;
  for (int u = seg->start; u <= t; ++u) {
    in = ctx.step_input(agent_id, u, w.standardizer, w.config);
    runner.advance(type, s, in);
  }
  return runner.readout(type, s, in.modulation);
}

struct AgentObservation {
  std::string type = kDefaultNodeType;
  AgentState state;
};

using Observations = std::map<int, AgentObservation>;

// Stateful predictor advanced one timestep at a time. Agents missing from a step are
// treated as departed; an id observed again later starts over with zero state.
template <typename T>
class OnlinePredictor {
 public:
  explicit OnlinePredictor(const ModelWeights<T>& w) : runner_(w), modulation_(w.config.filters) {}

  void step(const Observations& obs) {
    const ModelConfig& cfg = runner_.weights().config;
    std::vector<std::pair<int, Vec2>> positions;
    for (const auto& [id, o] : obs) {
      if (!cfg.has_node_type(o.type)) throw ConfigError("unknown node type '" + o.type + "'");
      positions.push_back({id, o.state.position});
    }
    modulation_.step(proximity_edges(positions, cfg.radius));

    std::map<int, Agent> next;
    for (const auto& [id, o] : obs) {
      auto it = agents_.find(id);
      Agent a;
      if (it != agents_.end()) {
        if (it->second.type != o.type) throw DataError("agent " + std::to_string(id) + " changed node type");
        a = std::move(it->second);
      } else {
        a.type = o.type;
        a.state = runner_.initial();
      }
      a.observed = o.state;
      types_[id] = o.type;
      ++a.steps;
      next.emplace(id, std::move(a));
    }
    for (auto& [id, a] : next) {
      a.input = input_for(id, a, next);
      runner_.advance(a.type, a.state, a.input);
    }
    agents_ = std::move(next);
    ++timestep_;
  }

  int timestep() const { return timestep_; }
  bool has_agent(int id) const { return agents_.count(id) > 0; }
  std::vector<int> agent_ids() const {
    std::vector<int> ids;
    for (const auto& [id, a] : agents_) ids.push_back(id);
    return ids;
  }
  // Consecutive steps the agent has been observed for.
  int history_length(int id) const { return agent(id).steps; }

  EncoderOutput<T> encoding(int id) const {
    const Agent& a = agent(id);
    return runner_.readout(a.type, a.state, a.input.modulation);
  }

  const OnlineModulation& modulation() const { return modulation_; }

  // Samples futures for every present agent with at least min_history observed steps.
  template <typename Rng>
  PredictionBatch predict(int n_samples, SamplingMode mode, Rng& rng, bool keep_gmm = false) const {
    const ModelConfig& cfg = runner_.weights().config;
    std::vector<EncodedAgent<T>> encoded;
    for (const auto& [id, a] : agents_) {
      if (a.steps < cfg.min_history) {
        notice("agent " + std::to_string(id) + " skipped: only " + std::to_string(a.steps) + " observed steps");
        continue;
      }
      encoded.push_back({id, a.type, encoding(id).h_enc, a.observed.position, a.observed.velocity});
    }
    if (encoded.empty()) return {};
    return predict_encoded(runner_.weights(), encoded, n_samples, mode, rng, keep_gmm);
  }

 private:
  struct Agent {
    std::string type;
    AgentState observed;
    RecurrentState<T> state;
    EncoderStep input;
    int steps = 0;
  };

  const Agent& agent(int id) const {
    auto it = agents_.find(id);
    if (it == agents_.end()) throw DataError("agent " + std::to_string(id) + " is not present");
    return it->second;
  }

  // Same neighbor and modulation rules as SceneContext::step_input, from the counters.
  EncoderStep input_for(int id, const Agent& a, const std::map<int, Agent>& present) const {
    const ModelConfig& cfg = runner_.weights().config;
    const Standardizer& st = runner_.weights().standardizer;
    const std::size_t K = cfg.node_types.size();
    EncoderStep in;
    in.node = st.transform(a.observed);
    in.neighbor_sum.assign(K, StateVector{});
    in.modulation.assign(K, 0.0);
    for (const auto& [pair, counter] : modulation_.counters()) {
      if (pair.first != id && pair.second != id) continue;
      const int j = pair.first == id ? pair.second : pair.first;
      auto other = present.find(j);
      const std::size_t k = node_type_index(cfg, types_.at(j));
      in.modulation[k] += counter.factor;
      if (other == present.end()) continue;
      if (modulation_.connected(id, j) || modulation_.fading(id, j)) {
        const auto f = st.transform(other->second.observed);
        for (std::size_t c = 0; c < kStateDim; ++c) in.neighbor_sum[k][c] += f[c];
      }
    }
    for (auto& m : in.modulation) m = std::min(m, 1.0);
    return in;
  }

  EncoderRunner<T> runner_;
  OnlineModulation modulation_;
  std::map<int, Agent> agents_;
  std::map<int, std::string> types_;  // last known type of every id seen, including departed ones
  int timestep_ = 0;
};

template <typename T>
void online_step(OnlinePredictor<T>& predictor, const Observations& obs) {
  predictor.step(obs);
}

}  // namespace trajectron
