#include <gtest/gtest.h>

#include "support.hpp"
#include "trajectron/eval/protocol.hpp"

using namespace tt;

namespace {

AgentTrack track_of(int id, const std::vector<Vec2>& path, int start = 0, double dt = kDefaultDt) {
  AgentTrack t;
  t.id = id;
  t.segments.push_back({start, differentiate_states(path, dt)});
  return t;
}

std::vector<Vec2> line(Vec2 start, Vec2 step, int n) {
  std::vector<Vec2> p;
  for (int k = 0; k < n; ++k) p.push_back(start + step * k);
  return p;
}

SceneTimeline scene_of(std::vector<AgentTrack> tracks, int steps) {
  SceneTimeline s;
  s.num_timesteps = steps;
  for (auto& t : tracks) s.agents.emplace(t.id, std::move(t));
  return s;
}

}  // namespace

TEST(Encoder, IdenticalHistoriesGiveIdenticalNodeState) {
  const auto w = initialize_weights<double>(tiny_config(), 1);
  // Two agents far apart with the same motion relative to their start.
  const auto scene = scene_of({track_of(1, line({0, 0}, {0.3, 0.1}, 6)), track_of(2, line({0, 0}, {0.3, 0.1}, 6))}, 6);
  const SceneContext ctx(scene, w.config);
  const auto enc = encode_agents_at(w, ctx, 5, {1, 2});
  EXPECT_EQ(enc[0].h_enc, enc[1].h_enc);
}

TEST(Encoder, ZeroLengthHistoryAndFutureContract) {
  const auto w = initialize_weights<double>(tiny_config(), 1);
  Tape<double> t(false);
  const auto v = bind_node(t, w, "PEDESTRIAN");
  EXPECT_THROW(encode_history<double>(v, t, {}), DataError);
  EXPECT_THROW(encode_future<double>(v, t, {Matrix<double>::Zero(1, 6)}, false), ContractError);
  EXPECT_NO_THROW(encode_future<double>(v, t, {Matrix<double>::Zero(1, 6)}, true));
}

TEST(EdgeEncoding, IsolatedAndMatureNeighbors) {
  const auto w = initialize_weights<double>(tiny_config(), 2);
  const EncoderRunner<double> runner(w);
  // Agent 1 alone; agents 2 and 3 together from the start.
  const auto scene = scene_of({track_of(1, line({20, 20}, {0.2, 0}, 10)), track_of(2, line({0, 0}, {0.2, 0}, 10)),
                               track_of(3, line({1, 0}, {0.2, 0}, 10))},
                              10);
  const SceneContext ctx(scene, w.config);
  const auto alone = encode_from_scratch(runner, ctx, 1, 9);
  EXPECT_EQ(alone.modulated_edges[0].norm(), 0.0);

  // Mature edge (factor 1): the modulated edge state equals the raw edge LSTM state.
  const auto in = ctx.step_input(2, 9, w.standardizer, w.config);
  ASSERT_EQ(in.modulation[0], 1.0);
  RecurrentState<double> s = runner.initial();
  for (int u = 0; u <= 9; ++u) runner.advance("PEDESTRIAN", s, ctx.step_input(2, u, w.standardizer, w.config));
  EXPECT_EQ(encode_from_scratch(runner, ctx, 2, 9).modulated_edges[0], s.h_edge[0]);
}

TEST(EdgeEncoding, NeighborOrderDoesNotMatter) {
  const auto w = initialize_weights<double>(tiny_config(), 3);
  const auto a = track_of(1, line({0, 0}, {0.2, 0}, 6));
  const auto b = line({1, 0.5}, {0.1, 0.1}, 6), c = line({-1, 0.4}, {0.3, -0.1}, 6);
  const auto s1 = scene_of({a, track_of(5, b), track_of(9, c)}, 6);
  const auto s2 = scene_of({a, track_of(5, c), track_of(9, b)}, 6);
  const SceneContext c1(s1, w.config), c2(s2, w.config);
  for (int t = 0; t < 6; ++t) {
    const auto x = c1.step_input(1, t, w.standardizer, w.config), y = c2.step_input(1, t, w.standardizer, w.config);
    EXPECT_EQ(x.neighbor_sum, y.neighbor_sum);
    EXPECT_EQ(x.modulation, y.modulation);
  }
  EXPECT_EQ(encode_agents_at(w, c1, 5, {1})[0].h_enc, encode_agents_at(w, c2, 5, {1})[0].h_enc);
}

TEST(CombineEdges, SingleTypeAndSymmetry) {
  std::mt19937_64 rng(4);
  const auto w = initialize_weights<double>(tiny_config(), 4);
  Tape<double> t(false);
  const auto v = bind_node(t, w, "PEDESTRIAN");
  const auto h_node = t.constant(Matrix<double>::Random(2, w.config.nhe_hidden));
  const auto e = t.constant(Matrix<double>::Random(2, w.config.ee_hidden));
  const auto [h1, a1] = combine_edges<double>(v, h_node, {e});
  EXPECT_EQ(a1.value(), Matrix<double>::Ones(2, 1));
  EXPECT_EQ(h1.value(), e.value());
  const auto [h2, a2] = combine_edges<double>(v, h_node, {e, e});
  EXPECT_EQ(a2.value(), Matrix<double>::Constant(2, 2, 0.5));
  EXPECT_THROW(combine_edges<double>(v, h_node, {}), ConfigError);
}

TEST(CombineEdges, GradientThroughAttention) {
  ModelConfig cfg = tiny_config();
  cfg.node_types = {"PEDESTRIAN", "BICYCLE"};
  auto w = initialize_weights<double>(cfg, 5);
  std::mt19937_64 rng(5);
  const Matrix<double> hn = Matrix<double>::Random(2, cfg.nhe_hidden);
  const Matrix<double> e0 = Matrix<double>::Random(2, cfg.ee_hidden), e1 = Matrix<double>::Random(2, cfg.ee_hidden);
  const Matrix<double> probe = Matrix<double>::Random(2, cfg.ee_hidden);
  const double err = weights_gradient_check(w, [&](Tape<double>& t, ModelWeights<double>& ww) {
    const auto v = bind_node(t, ww, "PEDESTRIAN");
    const auto [h, a] = combine_edges<double>(v, t.constant(hn), {t.constant(e0), t.constant(e1)});
    return nn::sum(nn::mul(h, t.constant(probe)));
  });
  EXPECT_LT(err, 1e-4);
}

TEST(Latent, ZeroWeightPriorIsUniformAndKlVanishes) {
  auto w = initialize_weights<double>(tiny_config(), 6);
  for (auto& [name, p] : w.params)
    if (name.find("/prior/") != std::string::npos) p.value.setZero();
  Tape<double> t(false);
  const auto v = bind_node(t, w, "PEDESTRIAN");
  const auto h = t.constant(Matrix<double>::Random(3, w.config.encoding_dim()));
  const auto p = nn::softmax_rows(prior_logits(v, h)).value();
  EXPECT_LT((p.array() - 1.0 / w.config.latent_cardinality).abs().maxCoeff(), 1e-15);
  const auto logits = prior_logits(v, h);
  EXPECT_EQ(nn::kl_categorical(logits, logits).value().norm(), 0.0);
}

TEST(Decoder, HorizonOneAndSeededRollouts) {
  ModelConfig cfg = tiny_config();
  cfg.horizon = 1;
  const auto w = initialize_weights<double>(cfg, 7);
  const auto scene = scene_of({track_of(0, line({0, 0}, {0.4, 0}, 5))}, 5);
  const SceneContext ctx(scene, cfg);
  std::mt19937_64 r1(3), r2(3);
  const auto a = predict(w, ctx, 4, 5, SamplingMode::Full, r1, true);
  const auto b = predict(w, ctx, 4, 5, SamplingMode::Full, r2, true);
  ASSERT_EQ(a.size(), 1u);
  for (int k = 0; k < 5; ++k) {
    EXPECT_EQ(a[0].samples[k].gmm.size(), 1u);
    EXPECT_EQ(a[0].samples[k].positions, b[0].samples[k].positions);
    EXPECT_EQ(a[0].samples[k].z, b[0].samples[k].z);
  }
}

TEST(Decoder, TeacherForcedGradientCheck) {
  auto w = initialize_weights<double>(tiny_config(), 8);
  const auto& cfg = w.config;
  std::mt19937_64 rng(8);
  const Matrix<double> h = Matrix<double>::Random(2, cfg.encoding_dim());
  const Matrix<double> first = Matrix<double>::Random(2, 2);
  std::vector<Matrix<double>> targets;
  for (int k = 0; k < cfg.horizon; ++k) targets.push_back(Matrix<double>::Random(2, 2));
  const double err = weights_gradient_check(w, [&](Tape<double>& t, ModelWeights<double>& ww) {
    const auto v = bind_node(t, ww, "PEDESTRIAN");
    return nn::sum(decode_log_likelihood(v, cfg, t.constant(h), one_hot<double>({0, 2}, cfg.latent_cardinality), first, targets));
  });
  EXPECT_LT(err, 1e-4);
}

TEST(Integrate, UniformStationaryAndRoundTrip) {
  const std::vector<Vec2> ones(4, Vec2{1, 0});
  const auto p = integrate_velocities({0, 0}, ones, 0.4);
  for (int k = 0; k < 4; ++k) {
    EXPECT_NEAR(p[k].x, 0.4 * (k + 1), 1e-15);
    EXPECT_EQ(p[k].y, 0.0);
  }
  const std::vector<Vec2> zeros(5);
  for (const auto& q : integrate_velocities({2, -3}, zeros, 0.4)) EXPECT_EQ(q, (Vec2{2, -3}));
  EXPECT_THROW(integrate_velocities({0, 0}, zeros, 0.0), ConfigError);

  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 0.3);
  std::vector<Vec2> track{{1, 2}};
  for (int k = 0; k < 30; ++k) track.push_back(track.back() + Vec2{n(rng), n(rng)});
  const auto states = differentiate_states(track, 0.4);
  std::vector<Vec2> vel;
  for (std::size_t k = 1; k < states.size(); ++k) vel.push_back(states[k].velocity);
  const auto back = integrate_velocities(track[0], vel, 0.4);
  for (std::size_t k = 0; k < back.size(); ++k) EXPECT_LT(distance(back[k], track[k + 1]), 1e-5);
}

TEST(Predict, ShapeContract) {
  ModelConfig cfg;
  const auto w = initialize_weights<double>(cfg, 10);
  const auto scene = scene_of({track_of(1, line({0, 0}, {0.4, 0}, 9)), track_of(2, line({1, 1}, {0.3, 0.1}, 9)),
                               track_of(3, line({5, 0}, {-0.4, 0}, 9))},
                              9);
  const SceneContext ctx(scene, cfg);
  std::mt19937_64 rng(10);
  const auto batch = predict(w, ctx, 8, 200, SamplingMode::Full, rng);
  ASSERT_EQ(batch.size(), 3u);
  for (const auto& a : batch) {
    ASSERT_EQ(a.samples.size(), 200u);
    for (const auto& s : a.samples) {
      EXPECT_EQ(s.positions.size(), 12u);
      EXPECT_EQ(s.velocities.size(), 12u);
    }
    double total = 0;
    for (double p : a.prior) total += p;
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Predict, SingleLatentValueMakesModesIdentical) {
  ModelConfig cfg = tiny_config();
  cfg.latent_cardinality = 1;
  const auto w = initialize_weights<double>(cfg, 11);
  const auto scene = scene_of({track_of(1, line({0, 0}, {0.4, 0}, 6)), track_of(2, line({1, 0}, {0.4, 0.1}, 6))}, 6);
  const SceneContext ctx(scene, cfg);
  std::mt19937_64 r1(5), r2(5);
  const auto full = predict(w, ctx, 5, 30, SamplingMode::Full, r1);
  const auto best = predict(w, ctx, 5, 30, SamplingMode::ZBest, r2);
  for (std::size_t a = 0; a < full.size(); ++a)
    for (int k = 0; k < 30; ++k) EXPECT_EQ(full[a].samples[k].positions, best[a].samples[k].positions);
}

TEST(Predict, ShortHistorySkipped) {
  QuietNotices quiet;
  ModelConfig cfg = tiny_config();
  cfg.min_history = cfg.history_length = 4;
  const auto w = initialize_weights<double>(cfg, 12);
  const auto scene = scene_of({track_of(1, line({0, 0}, {0.4, 0}, 6)), track_of(2, line({1, 0}, {0.4, 0}, 3), 3)}, 6);
  const SceneContext ctx(scene, cfg);
  std::mt19937_64 rng(1);
  const auto batch = predict(w, ctx, 5, 3, SamplingMode::Full, rng);
  ASSERT_EQ(batch.size(), 1u);
  EXPECT_EQ(batch[0].agent_id, 1);
}

TEST(Online, EightStepsMatchBatchEncode) {
  ModelConfig cfg;
  const auto w = initialize_weights<double>(cfg, 13);
  const auto scene = scene_of({track_of(1, line({0, 0}, {0.4, 0}, 8)), track_of(2, line({1, 0.5}, {0.35, 0.05}, 8)),
                               track_of(3, line({4, 0}, {-0.3, 0}, 8))},
                              8);
  const SceneContext ctx(scene, cfg);
  const EncoderRunner<double> runner(w);
  OnlinePredictor<double> online(w);
  for (int t = 0; t < 8; ++t) online_step(online, eval::observations_at(scene, t));
  const auto batched = encode_agents_at(w, ctx, 7, {1, 2, 3});
  for (std::size_t a = 0; a < 3; ++a) {
    const int id = batched[a].agent_id;
    // Row-at-a-time reference is bit-identical; the batched unroll may round differently.
    EXPECT_EQ(online.encoding(id).h_enc, encode_from_scratch(runner, ctx, id, 7).h_enc);
    EXPECT_LT((online.encoding(id).h_enc - batched[a].h_enc).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Online, DepartureFadesEdge) {
  const auto w = initialize_weights<double>(tiny_config(), 14);
  const auto a = line({0, 0}, {0.3, 0}, 8), b = line({0, 1}, {0.3, 0}, 8);
  auto run = [&](int b_steps) {
    OnlinePredictor<double> p(w);
    for (int t = 0; t < 8; ++t) {
      Observations obs;
      obs[1] = {"PEDESTRIAN", differentiate_states(a, 0.4)[t]};
      if (t < b_steps) obs[2] = {"PEDESTRIAN", differentiate_states(b, 0.4)[t]};
      online_step(p, obs);
    }
    return p;
  };
  const auto stays = run(8), leaves = run(7), never = run(0);
  EXPECT_NE(leaves.encoding(1).h_edges, stays.encoding(1).h_edges);
  EXPECT_NE(leaves.encoding(1).h_edges, never.encoding(1).h_edges);
  // At the departure step R(0) = 1 keeps the mature edge's influence.
  EXPECT_EQ(leaves.encoding(1).modulated_edges[0].norm() > 0, true);
  EXPECT_THROW(leaves.encoding(2), DataError);
}

TEST(Online, StepFasterThanReEncodeForTwentyAgents) {
  const auto w = initialize_weights<double>(ModelConfig{}, 15);
  std::vector<AgentTrack> tracks;
  for (int i = 0; i < 20; ++i) tracks.push_back(track_of(i, line({0.3 * i, 0.2 * (i % 5)}, {0.1, 0.05 * (i % 3)}, 8)));
  const auto scene = scene_of(tracks, 8);
  const auto [online, batch] = eval::incremental_benchmark(w, scene, 7, 10);
  EXPECT_LT(online.median, batch.median);
}

TEST(Weights, InitializationRules) {
  ModelConfig cfg = tiny_config();
  cfg.node_types = {"PEDESTRIAN", "BICYCLE"};
  const auto a = initialize_weights<double>(cfg, 21), b = initialize_weights<double>(cfg, 21), c = initialize_weights<double>(cfg, 22);
  bool any_diff = false;
  for (const auto& [name, p] : a.params) {
    EXPECT_EQ(p.value, b.at(name).value) << name;
    any_diff = any_diff || p.value != c.at(name).value;
  }
  EXPECT_TRUE(any_diff);
  EXPECT_NE(a.at("PEDESTRIAN/nhe/weight").value, a.at("BICYCLE/nhe/weight").value);
  for (const auto& [name, p] : a.params)
    if (name.size() > 5 && name.ends_with("/bias") && p.value.cols() % 4 == 0 && name.find("lstm") != std::string::npos) {
      const auto H = p.value.cols() / 4;
      EXPECT_EQ(p.value.middleCols(H, H), Matrix<double>::Ones(1, H)) << name;
    }
  const auto H = cfg.nhe_hidden;
  EXPECT_EQ(a.at("PEDESTRIAN/nhe/bias").value.middleCols(H, H), Matrix<double>::Ones(1, H));
  EXPECT_NO_THROW(a.check_structure());
}
