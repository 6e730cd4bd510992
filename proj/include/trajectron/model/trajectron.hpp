#pragma once

#include <algorithm>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "trajectron/model/features.hpp"
#include "trajectron/model/weights.hpp"
#include "trajectron/nn/gmm.hpp"

namespace trajectron {

// ---------------------------------------------------------------- encoder

template <typename T>
struct EncoderState {
  nn::LstmState<T> node;
  std::vector<nn::LstmState<T>> edges;
};

template <typename T>
EncoderState<T> encoder_zero_state(Tape<T>& tape, const ModelConfig& cfg, Eigen::Index rows) {
  EncoderState<T> s;
  s.node = nn::zero_state(tape, rows, cfg.nhe_hidden);
  for (std::size_t k = 0; k < cfg.node_types.size(); ++k) s.edges.push_back(nn::zero_state(tape, rows, cfg.ee_hidden));
  return s;
}

template <typename T>
Matrix<T> node_input_matrix(std::span<const EncoderStep* const> rows) {
  Matrix<T> x(static_cast<Eigen::Index>(rows.size()), kStateDim);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < kStateDim; ++c) x(r, c) = static_cast<T>(rows[r]->node[c]);
  return x;
}

// Edge encoder input [x_i ; sum_j x_j] for edge type k.
template <typename T>
Matrix<T> edge_input_matrix(std::span<const EncoderStep* const> rows, std::size_t k) {
  Matrix<T> x(static_cast<Eigen::Index>(rows.size()), 2 * kStateDim);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < kStateDim; ++c) {
      x(r, c) = static_cast<T>(rows[r]->node[c]);
      x(r, kStateDim + c) = static_cast<T>(rows[r]->neighbor_sum[k][c]);
    }
  return x;
}

// Advances the node history encoder and every edge encoder by one step.
template <typename T>
EncoderState<T> encoder_step(const NodeVars<T>& v, const EncoderState<T>& s, std::span<const EncoderStep* const> rows) {
  Tape<T>& tape = *s.node.h.tape;
  EncoderState<T> next;
  next.node = nn::lstm_step(v.nhe, s.node, tape.constant(node_input_matrix<T>(rows)));
  for (std::size_t k = 0; k < s.edges.size(); ++k)
    next.edges.push_back(nn::lstm_step(v.edges[k], s.edges[k], tape.constant(edge_input_matrix<T>(rows, k))));
  return next;
}

// Node history encoding over a sequence; returns the hidden state after every step.
template <typename T>
std::vector<Var<T>> encode_history(const NodeVars<T>& v, Tape<T>& tape, const std::vector<Matrix<T>>& states) {
  if (states.empty()) throw DataError("encode_history: empty history");
  std::vector<Var<T>> out;
  auto s = nn::zero_state(tape, states.front().rows(), v.nhe.hidden());
  for (const auto& x : states) {
    s = nn::lstm_step(v.nhe, s, tape.constant(x));
    out.push_back(s.h);
  }
  return out;
}

// Bi-directional summary of the ground-truth future; only defined while training.
template <typename T>
Var<T> encode_future(const NodeVars<T>& v, Tape<T>& tape, const std::vector<Matrix<T>>& future_states, bool training) {
  if (!training) throw ContractError("the future encoder is only available during training");
  std::vector<Var<T>> seq;
  for (const auto& x : future_states) seq.push_back(tape.constant(x));
  return nn::bilstm_encode(seq, v.nfe_fwd, v.nfe_bwd);
}

// h~ = h * min(sum_j M[t,i,j], 1); `modulation` is already capped.
template <typename T>
Var<T> modulate_edge(Var<T> edge_hidden, const Matrix<T>& modulation_col) {
  return nn::mul_col(edge_hidden, edge_hidden.tape->constant(modulation_col));
}

template <typename T>
struct Encoding {
  Var<T> h_node;
  Var<T> h_edges;
  Var<T> h_enc;       // [h_edges ; h_node]
  Var<T> attention;   // [rows x K]
  std::vector<Var<T>> modulated_edges;
};

// Additive attention over edge types with the node state as query.
template <typename T>
std::pair<Var<T>, Var<T>> combine_edges(const NodeVars<T>& v, Var<T> h_node, const std::vector<Var<T>>& modulated) {
  if (modulated.empty()) throw ConfigError("combine_edges needs at least one edge type");
  std::vector<Var<T>> scores;
  for (const auto& h : modulated) scores.push_back(nn::attention_score(h_node, h, v.attn_v, v.attn_w_edge, v.attn_w_node));
  Var<T> weights = nn::softmax_rows(nn::concat_cols(scores));
  Var<T> h_edges = nn::mul_col(modulated[0], nn::slice_cols(weights, 0, 1));
  for (std::size_t k = 1; k < modulated.size(); ++k)
    h_edges = nn::add(h_edges, nn::mul_col(modulated[k], nn::slice_cols(weights, static_cast<Eigen::Index>(k), 1)));
  return {h_edges, weights};
}

template <typename T>
Encoding<T> encoder_readout(const NodeVars<T>& v, const EncoderState<T>& s, const Matrix<T>& modulation) {
  Encoding<T> e;
  e.h_node = s.node.h;
  for (std::size_t k = 0; k < s.edges.size(); ++k)
    e.modulated_edges.push_back(modulate_edge(s.edges[k].h, Matrix<T>(modulation.col(static_cast<Eigen::Index>(k)))));
  auto [h_edges, attention] = combine_edges(v, e.h_node, e.modulated_edges);
  e.h_edges = h_edges;
  e.attention = attention;
  e.h_enc = nn::concat_cols<T>({h_edges, e.h_node});
  return e;
}

template <typename T>
Matrix<T> modulation_matrix(std::span<const EncoderStep* const> rows, std::size_t K) {
  Matrix<T> m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(K));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t k = 0; k < K; ++k) m(r, k) = static_cast<T>(rows[r]->modulation[k]);
  return m;
}

// Runs equal-length encoder sequences (one per row) and reads out h_enc at the last step.
template <typename T>
Encoding<T> encode_sequences(const NodeVars<T>& v, Tape<T>& tape, const ModelConfig& cfg,
                             const std::vector<const std::vector<EncoderStep>*>& sequences) {
  if (sequences.empty()) throw DataError("encode_sequences: no rows");
  const std::size_t steps = sequences.front()->size();
  if (steps == 0) throw DataError("encode_sequences: zero-length history");
  auto state = encoder_zero_state(tape, cfg, static_cast<Eigen::Index>(sequences.size()));
  std::vector<const EncoderStep*> rows(sequences.size());
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t r = 0; r < sequences.size(); ++r) {
      if (sequences[r]->size() != steps) throw ShapeError("encode_sequences: ragged histories");
      rows[r] = &(*sequences[r])[t];
    }
    state = encoder_step(v, state, std::span<const EncoderStep* const>(rows));
  }
  return encoder_readout(v, state, modulation_matrix<T>(std::span<const EncoderStep* const>(rows), cfg.node_types.size()));
}

// ---------------------------------------------------------------- latent

template <typename T>
Var<T> prior_logits(const NodeVars<T>& v, Var<T> h_enc) {
  return nn::mlp(v.prior, h_enc);
}

template <typename T>
Var<T> recognition_logits(const NodeVars<T>& v, Var<T> h_enc, Var<T> h_future) {
  return nn::mlp(v.recognition, nn::concat_cols<T>({h_enc, h_future}));
}

template <typename T>
Matrix<T> one_hot(const std::vector<int>& z, int cardinality) {
  Matrix<T> m = Matrix<T>::Zero(static_cast<Eigen::Index>(z.size()), cardinality);
  for (std::size_t r = 0; r < z.size(); ++r) {
    if (z[r] < 0 || z[r] >= cardinality) throw ConfigError("latent value out of range");
    m(r, z[r]) = T(1);
  }
  return m;
}

// Mode of a categorical given by logits; ties go to the lowest index.
template <typename Row>
int argmax_lowest(const Row& logits) {
  int best = 0;
  for (int k = 1; k < static_cast<int>(logits.size()); ++k)
    if (logits(k) > logits(best)) best = k;
  return best;
}

// ---------------------------------------------------------------- decoder

template <typename T>
Var<T> decoder_input(Tape<T>& tape, const Matrix<T>& prev_velocity, const Matrix<T>& z_one_hot, Var<T> h_enc) {
  return nn::concat_cols<T>({tape.constant(prev_velocity), tape.constant(z_one_hot), h_enc});
}

// Teacher-forced rollout: sum over the horizon of log GMM(y_t) with ground truth fed back.
// Returns [rows x 1]. `targets` holds one [rows x 2] velocity matrix per step.
template <typename T>
Var<T> decode_log_likelihood(const NodeVars<T>& v, const ModelConfig& cfg, Var<T> h_enc, const Matrix<T>& z_one_hot,
                             const Matrix<T>& first_prev, const std::vector<Matrix<T>>& targets) {
  if (targets.empty()) throw ConfigError("horizon must be at least 1");
  Tape<T>& tape = *h_enc.tape;
  auto state = nn::zero_state(tape, h_enc.rows(), v.decoder.hidden());
  Var<T> total;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const Matrix<T>& prev = t == 0 ? first_prev : targets[t - 1];
    state = nn::lstm_step(v.decoder, state, decoder_input(tape, prev, z_one_hot, h_enc));
    Var<T> ll = nn::gmm_log_prob(nn::dense(v.output, state.h), targets[t], cfg.gmm_components);
    total = t == 0 ? ll : nn::add(total, ll);
  }
  return total;
}

// Raw GMM outputs for every step of a teacher-forced rollout (used to audit parameterization).
template <typename T>
std::vector<Matrix<T>> decode_raw_teacher_forced(const NodeVars<T>& v, Var<T> h_enc, const Matrix<T>& z_one_hot,
                                                 const Matrix<T>& first_prev, const std::vector<Matrix<T>>& targets) {
  Tape<T>& tape = *h_enc.tape;
  auto state = nn::zero_state(tape, h_enc.rows(), v.decoder.hidden());
  std::vector<Matrix<T>> out;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const Matrix<T>& prev = t == 0 ? first_prev : targets[t - 1];
    state = nn::lstm_step(v.decoder, state, decoder_input(tape, prev, z_one_hot, h_enc));
    out.push_back(nn::dense(v.output, state.h).value());
  }
  return out;
}

struct SampledRollout {
  std::vector<std::vector<Vec2>> velocities;           // [row][step]
  std::vector<std::vector<nn::GmmParams>> gmm;         // [row][step], only when requested
};

// Sampled rollout: each step's sampled velocity is fed back as the next input.
template <typename T, typename Rng>
SampledRollout decode_sampled(const NodeVars<T>& v, const ModelConfig& cfg, Var<T> h_enc, const Matrix<T>& z_one_hot,
                              const Matrix<T>& first_prev, int horizon, Rng& rng, bool keep_gmm = false) {
  if (horizon < 1) throw ConfigError("horizon must be at least 1");
  Tape<T>& tape = *h_enc.tape;
  const auto rows = h_enc.rows();
  SampledRollout out;
  out.velocities.assign(rows, std::vector<Vec2>(horizon));
  if (keep_gmm) out.gmm.assign(rows, std::vector<nn::GmmParams>(horizon));
  auto state = nn::zero_state(tape, rows, v.decoder.hidden());
  Matrix<T> prev = first_prev;
  for (int t = 0; t < horizon; ++t) {
    state = nn::lstm_step(v.decoder, state, decoder_input(tape, prev, z_one_hot, h_enc));
    const Matrix<T> raw = nn::dense(v.output, state.h).value();
    for (Eigen::Index r = 0; r < rows; ++r) {
      nn::GmmParams p = nn::gmm_from_raw(raw.row(r), cfg.gmm_components);
      const Vec2 y = nn::gmm_sample(p, rng);
      out.velocities[r][t] = y;
      prev(r, 0) = static_cast<T>(y.x);
      prev(r, 1) = static_cast<T>(y.y);
      if (keep_gmm) out.gmm[r][t] = std::move(p);
    }
  }
  return out;
}

// X^{t+1} = X^t + y^{t+1} dt, starting from the last observed position.
inline std::vector<Vec2> integrate_velocities(Vec2 start, std::span<const Vec2> velocities, double dt) {
  if (!(dt > 0.0)) throw ConfigError("dt must be positive");
  std::vector<Vec2> out;
  out.reserve(velocities.size());
  Vec2 p = start;
  for (const Vec2& v : velocities) {
    p += v * dt;
    out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------- prediction

enum class SamplingMode { Full, ZBest };

inline const char* mode_name(SamplingMode m) { return m == SamplingMode::Full ? "full" : "z_best"; }

struct PredictedSample {
  int z = 0;
  std::vector<Vec2> velocities;
  std::vector<Vec2> positions;
  std::vector<nn::GmmParams> gmm;
};

struct AgentPrediction {
  int agent_id = 0;
  std::string type;
  Vec2 last_position;
  std::vector<double> prior;  // p(z | x)
  std::vector<PredictedSample> samples;
};

using PredictionBatch = std::vector<AgentPrediction>;

// Everything the decoder needs about one agent once its history is encoded.
template <typename T>
struct EncodedAgent {
  int agent_id = 0;
  std::string type;
  Matrix<T> h_enc;  // [1 x encoding_dim]
  Vec2 last_position;
  Vec2 last_velocity;
};

// Samples trajectories for already-encoded agents. z streams come from a generator
// seeded off `rng`, so with |Z| = 1 both modes produce identical outputs.
template <typename T, typename Rng>
PredictionBatch predict_encoded(const ModelWeights<T>& w, const std::vector<EncodedAgent<T>>& agents, int n_samples,
                                SamplingMode mode, Rng& rng, bool keep_gmm = false) {
  const ModelConfig& cfg = w.config;
  if (n_samples < 1) throw ConfigError("n_samples must be at least 1");
  std::mt19937_64 z_rng(rng());
  PredictionBatch out(agents.size());
  std::map<std::string, std::vector<std::size_t>> by_type;
  for (std::size_t a = 0; a < agents.size(); ++a) by_type[agents[a].type].push_back(a);

  for (const auto& [type, members] : by_type) {
    Tape<T> tape(false);
    const NodeVars<T> v = bind_node(tape, w, type);
    const auto n = static_cast<Eigen::Index>(members.size());
    Matrix<T> h(n, cfg.encoding_dim());
    for (Eigen::Index r = 0; r < n; ++r) h.row(r) = agents[members[r]].h_enc.row(0);
    const Matrix<T> logits = prior_logits(v, tape.constant(h)).value();

    std::vector<Eigen::Index> gather;
    std::vector<int> z;
    Matrix<T> prev(n * n_samples, 2);
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto& agent = agents[members[r]];
      auto& pred = out[members[r]];
      pred.agent_id = agent.agent_id;
      pred.type = agent.type;
      pred.last_position = agent.last_position;
      std::vector<double> probs(cfg.latent_cardinality);
      const double mx = logits.row(r).maxCoeff();
      double s = 0.0;
      for (int k = 0; k < cfg.latent_cardinality; ++k) s += probs[k] = std::exp(static_cast<double>(logits(r, k)) - mx);
      for (auto& p : probs) p /= s;
      pred.prior = probs;
      const int best = argmax_lowest(logits.row(r));
      std::discrete_distribution<int> categorical(probs.begin(), probs.end());
      for (int k = 0; k < n_samples; ++k) {
        gather.push_back(r);
        z.push_back(mode == SamplingMode::Full ? categorical(z_rng) : best);
        prev(r * n_samples + k, 0) = static_cast<T>(agent.last_velocity.x);
        prev(r * n_samples + k, 1) = static_cast<T>(agent.last_velocity.y);
      }
    }
    Var<T> h_rows = nn::gather_rows(tape.constant(h), gather);
    auto rollout = decode_sampled(v, cfg, h_rows, one_hot<T>(z, cfg.latent_cardinality), prev, cfg.horizon, rng, keep_gmm);
    for (Eigen::Index r = 0; r < n; ++r) {
      auto& pred = out[members[r]];
      pred.samples.resize(n_samples);
      for (int k = 0; k < n_samples; ++k) {
        const auto row = static_cast<std::size_t>(r * n_samples + k);
        auto& s = pred.samples[k];
        s.z = z[row];
        s.velocities = std::move(rollout.velocities[row]);
        s.positions = integrate_velocities(pred.last_position, s.velocities, cfg.dt);
        if (keep_gmm) s.gmm = std::move(rollout.gmm[row]);
      }
    }
  }
  return out;
}

// Encoder window for one agent at t_obs: up to history_length consecutive steps.
inline std::vector<EncoderStep> encoder_window(const SceneContext& ctx, const ModelConfig& cfg, const Standardizer& st,
                                               int agent_id, int t_obs, int length) {
  std::vector<EncoderStep> seq;
  seq.reserve(length);
  for (int t = t_obs - length + 1; t <= t_obs; ++t) seq.push_back(ctx.step_input(agent_id, t, st, cfg));
  return seq;
}

// Encodes each listed agent on its own history window ending at t_obs.
template <typename T>
std::vector<EncodedAgent<T>> encode_agents_at(const ModelWeights<T>& w, const SceneContext& ctx, int t_obs,
                                              const std::vector<int>& agent_ids) {
  const ModelConfig& cfg = w.config;
  // Group rows by (type, window length) so each group is one batched unroll.
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> groups;
  std::vector<std::vector<EncoderStep>> windows(agent_ids.size());
  for (std::size_t a = 0; a < agent_ids.size(); ++a) {
    const int len = std::min(cfg.history_length, ctx.history_available(agent_ids[a], t_obs));
    windows[a] = encoder_window(ctx, cfg, w.standardizer, agent_ids[a], t_obs, len);
    groups[{ctx.scene().agents.at(agent_ids[a]).type, len}].push_back(a);
  }
  std::vector<EncodedAgent<T>> out(agent_ids.size());
  for (const auto& [key, members] : groups) {
    Tape<T> tape(false);
    const NodeVars<T> v = bind_node(tape, w, key.first);
    std::vector<const std::vector<EncoderStep>*> seqs;
    for (auto a : members) seqs.push_back(&windows[a]);
    const Matrix<T> h = encode_sequences(v, tape, cfg, seqs).h_enc.value();
    for (std::size_t r = 0; r < members.size(); ++r) {
      const auto a = members[r];
      const AgentState& last = *ctx.scene().agents.at(agent_ids[a]).state_at(t_obs);
      out[a] = {agent_ids[a], key.first, h.row(static_cast<Eigen::Index>(r)), last.position, last.velocity};
    }
  }
  return out;
}

// Agents at t_obs with at least min_history observed steps; others are skipped with a notice.
inline std::vector<int> predictable_agents(const SceneContext& ctx, const ModelConfig& cfg, int t_obs, bool announce = true) {
  std::vector<int> ids;
  for (int id : ctx.scene().present_at(t_obs)) {
    if (ctx.history_available(id, t_obs) >= cfg.min_history)
      ids.push_back(id);
    else if (announce)
      notice("agent " + std::to_string(id) + " skipped at timestep " + std::to_string(t_obs) + ": only " +
             std::to_string(ctx.history_available(id, t_obs)) + " observed steps");
  }
  return ids;
}

template <typename T, typename Rng>
PredictionBatch predict(const ModelWeights<T>& w, const SceneContext& ctx, int t_obs, int n_samples, SamplingMode mode,
                        Rng& rng, bool keep_gmm = false) {
  const auto ids = predictable_agents(ctx, w.config, t_obs);
  if (ids.empty()) return {};
  return predict_encoded(w, encode_agents_at(w, ctx, t_obs, ids), n_samples, mode, rng, keep_gmm);
}

}  // namespace trajectron
