#include <gtest/gtest.h>

#include "support.hpp"

using namespace tt;

namespace {

SceneTimeline two_agents(double gap, int steps, int exit_at = -1) {
  SceneTimeline s;
  s.num_timesteps = steps;
  for (int a = 0; a < 2; ++a) {
    const int len = a == 1 && exit_at > 0 ? exit_at : steps;
    std::vector<Vec2> path;
    for (int k = 0; k < len; ++k) path.push_back({0.1 * k, gap * a});
    AgentTrack t;
    t.id = a;
    t.segments.push_back({0, differentiate_states(path, s.dt)});
    s.agents.emplace(a, std::move(t));
  }
  return s;
}

// Factors of one pair whose connectivity over time is `on`.
std::vector<double> factors(const std::vector<int>& on, const FilterPair& f = FilterPair::defaults()) {
  EdgeMask mask({0, 1}, static_cast<int>(on.size()));
  for (std::size_t t = 0; t < on.size(); ++t) mask.set(0, 1, static_cast<int>(t), on[t]);
  const auto m = compute_modulation_tensor(mask, f);
  std::vector<double> out;
  for (std::size_t t = 0; t < on.size(); ++t) out.push_back(m.at(static_cast<int>(t), 0, 1));
  return out;
}

}  // namespace

TEST(GraphHistory, RadiusGating) {
  EXPECT_TRUE(build_graph_history(two_agents(1.0, 4), 3.0).mask.at(0, 1, 2));
  EXPECT_FALSE(build_graph_history(two_agents(5.0, 4), 3.0).mask.at(0, 1, 2));
  EXPECT_TRUE(build_graph_history(two_agents(3.0, 4), 3.0).mask.at(0, 1, 0));  // boundary counts
}

TEST(GraphHistory, ExitClearsEdges) {
  const auto g = build_graph_history(two_agents(1.0, 10, 5), 3.0);
  for (int t = 0; t < 5; ++t) EXPECT_TRUE(g.mask.at(0, 1, t));
  for (int t = 5; t < 10; ++t) EXPECT_FALSE(g.mask.at(0, 1, t));
  EXPECT_TRUE(g.snapshots[7].neighbors(0, EdgeType("PEDESTRIAN", "PEDESTRIAN")).empty());
  EXPECT_EQ(g.snapshots[3].neighbors(0, EdgeType("PEDESTRIAN", "PEDESTRIAN")), std::vector<int>{1});
}

TEST(GraphHistory, TypedNeighbors) {
  auto s = two_agents(1.0, 3);
  s.agents.at(1).type = "BICYCLE";
  const auto g = build_graph_history(s);
  const EdgeType k("PEDESTRIAN", "BICYCLE");
  EXPECT_EQ(k.first, "BICYCLE");
  EXPECT_EQ(g.snapshots[0].neighbors(0, k), std::vector<int>{1});
  EXPECT_EQ(g.snapshots[0].neighbors(1, k), std::vector<int>{0});
  EXPECT_THROW(build_graph_history(s, 0.0), ConfigError);
}

TEST(Modulation, AdditionRamp) {
  const auto f = factors(std::vector<int>(9, 1));
  const std::vector<double> expect{0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.0, 1.0, 1.0};
  for (std::size_t t = 0; t < f.size(); ++t) EXPECT_DOUBLE_EQ(f[t], expect[t]);
}

TEST(Modulation, InstantAddition) {
  for (double v : factors(std::vector<int>(7, 1), {{}, {1.0, 0.0}})) EXPECT_EQ(v, 1.0);
}

TEST(Modulation, RemovalOfMatureEdge) {
  std::vector<int> on(14, 0);
  for (int t = 0; t <= 9; ++t) on[t] = 1;
  const auto f = factors(on);
  EXPECT_EQ(f[9], 1.0);
  EXPECT_EQ(f[10], 1.0);
  EXPECT_EQ(f[11], 0.0);
  EXPECT_EQ(f[13], 0.0);
}

TEST(Modulation, DitheringStaysAtOrBelowFirstRampStep) {
  std::vector<int> on;
  for (int t = 0; t < 40; ++t) on.push_back(t % 2);
  for (double v : factors(on)) EXPECT_LE(v, 0.2);
  on.clear();
  for (int t = 0; t < 40; ++t) on.push_back(1 - t % 2);
  for (double v : factors(on)) EXPECT_LE(v, 0.2);
}

TEST(Modulation, ReAddedMatureEdgeResumesWithoutJump) {
  std::vector<int> on(12, 1);
  on[7] = 0;
  const auto f = factors(on);
  EXPECT_EQ(f[7], 1.0);
  EXPECT_EQ(f[8], 1.0);
  // A longer gap fades completely, so the ramp restarts from A(0).
  on = std::vector<int>(12, 1);
  on[6] = on[7] = 0;
  const auto g = factors(on);
  EXPECT_EQ(g[7], 0.0);
  EXPECT_EQ(g[8], 0.0);
  EXPECT_DOUBLE_EQ(g[9], 0.2);
}

TEST(Modulation, SlowerRemovalScalesByFactorAtRemoval) {
  const FilterPair f{{0.0, 0.5}, {1.0, 0.5, 0.25}};
  // Removed at age 1 (factor 0.5): fade 0.5, 0.25, 0.125 then 0.
  const auto v = factors({1, 1, 0, 0, 0, 0, 0}, f);
  EXPECT_DOUBLE_EQ(v[1], 0.5);
  EXPECT_DOUBLE_EQ(v[2], 0.5);
  EXPECT_DOUBLE_EQ(v[3], 0.25);
  EXPECT_DOUBLE_EQ(v[4], 0.125);
  EXPECT_EQ(v[5], 0.0);
}

TEST(FilterPair, Validation) {
  EXPECT_NO_THROW(FilterPair::defaults().validate());
  EXPECT_THROW((FilterPair{{0.5, 0.2}, {}}.validate()), ConfigError);
  EXPECT_THROW((FilterPair{{}, {0.2, 0.5}}.validate()), ConfigError);
  EXPECT_THROW((FilterPair{{1.5}, {}}.validate()), ConfigError);
  EXPECT_EQ(FilterPair::defaults().resume_age(0.5), 3);
  EXPECT_EQ(FilterPair::defaults().resume_age(1.0), 5);
}

TEST(Aggregate, SumCappedAtOne) {
  EXPECT_EQ(aggregate_factors({1.0}), 1.0);
  EXPECT_DOUBLE_EQ(aggregate_factors({0.2, 0.2}), 0.4);
  EXPECT_EQ(aggregate_factors({0.6, 0.6, 0.6}), 1.0);
  EXPECT_EQ(aggregate_factors({}), 0.0);

  EdgeMask mask({0, 1, 2}, 2);
  mask.set(0, 1, 1, true);
  mask.set(0, 2, 1, true);
  const auto m = compute_modulation_tensor(mask, {{0.2}, {1.0}});
  EXPECT_DOUBLE_EQ(aggregate_pair_factors(m, 1, 0, {1, 2}), 0.4);
}

TEST(OnlineSlice, NewAgentWithOneEdge) {
  const FilterPair f{{0.3, 0.7}, {1.0, 0.0}};
  std::map<AgentPair, PairCounter> counters;
  std::vector<std::vector<bool>> adj(3, std::vector<bool>(3, false));
  adj[0][1] = adj[1][0] = true;
  online_modulation_slice(adj, counters, f);
  // Agent 2 joins next to agent 0 only.
  adj[0][2] = adj[2][0] = true;
  const auto s = online_modulation_slice(adj, counters, f);
  int nonzero = 0;
  for (int j = 0; j < 3; ++j) nonzero += s[2][j] != 0.0;
  EXPECT_EQ(nonzero, 1);
  EXPECT_EQ(s[2][0], 0.3);

  // Under the default filter A(0) = 0, so the new row is still all zeros at the join step.
  std::map<AgentPair, PairCounter> c2;
  const auto d = online_modulation_slice(adj, c2, FilterPair::defaults());
  for (int j = 0; j < 3; ++j) EXPECT_EQ(d[2][j], 0.0);
}

TEST(OnlineSlice, SteadyState) {
  std::map<AgentPair, PairCounter> counters;
  std::vector<std::vector<bool>> adj(4, std::vector<bool>(4, false));
  adj[0][1] = adj[1][0] = adj[2][3] = adj[3][2] = true;
  std::vector<std::vector<double>> s;
  for (int t = 0; t < 10; ++t) s = online_modulation_slice(adj, counters, FilterPair::defaults());
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_EQ(s[i][j], adj[i][j] ? 1.0 : 0.0);
}

TEST(OnlineSlice, MatchesBatchOnRandomScenes) {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 50; ++k) {
    const auto scene = random_scene(rng, 6, 25);
    const auto g = build_graph_history(scene);
    const auto m = compute_modulation_tensor(g.mask, FilterPair::defaults());
    OnlineModulation online;
    const auto& ids = g.mask.agent_ids();
    for (int t = 0; t < scene.num_timesteps; ++t) {
      std::vector<std::pair<int, Vec2>> present;
      for (int id : scene.present_at(t)) present.push_back({id, scene.agents.at(id).state_at(t)->position});
      online.step(proximity_edges(present, kDefaultRadius));
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < ids.size(); ++j)
          if (i != j) {
            ASSERT_EQ(online.factor(ids[i], ids[j]), m.at(t, i, j));
          }
    }
  }
}

TEST(RemovalWindow, FadingPairs) {
  EdgeMask mask({0, 1}, 6);
  for (int t = 0; t < 3; ++t) mask.set(0, 1, t, true);
  const FilterPair f{{}, {1.0, 0.5}};
  EXPECT_FALSE(within_removal_window(mask, 0, 1, 2, f));
  EXPECT_TRUE(within_removal_window(mask, 0, 1, 3, f));
  EXPECT_TRUE(within_removal_window(mask, 0, 1, 4, f));
  EXPECT_FALSE(within_removal_window(mask, 0, 1, 5, f));
}
