#include <gtest/gtest.h>

#include "dfl/linkschedule.hpp"
#include "oracles.hpp"

using namespace dfl;

TEST(BottleneckRate, SlowestChild) {
  const Topology t = topology_from_weights(4, {{0, 1, 0.1}, {0, 2, 0.2}, {0, 3, 0.05}});
  const BroadcastTree star = BroadcastTree::from_parents(0, {kNoNode, 0, 0, 0});
  EXPECT_DOUBLE_EQ(bottleneck_rate(star, t, 0), 5.0);
  EXPECT_DOUBLE_EQ(bottleneck_rate(star, t, 0), 1.0 / hop_max_weight(star, t, 0));
  const BroadcastTree path = BroadcastTree::from_parents(0, {kNoNode, 0, 1, 2});
  const Topology p = topology_from_weights(4, {{0, 1, 0.1}, {1, 2, 0.2}, {2, 3, 0.05}});
  EXPECT_DOUBLE_EQ(bottleneck_rate(path, p, 1), 5.0);
  EXPECT_THROW(bottleneck_rate(star, t, 1), std::invalid_argument);
}

TEST(HopLatency, Basics) {
  EXPECT_DOUBLE_EQ(hop_latency(100, 50.0), 2.0);
  EXPECT_DOUBLE_EQ(hop_latency(0, 50.0), 0.0);
  const std::uint64_t bits = static_cast<std::uint64_t>(0.5 * 11.69e6) * 32;
  EXPECT_NEAR(hop_latency(bits, 1e8), 1.8704, 1e-12);
  EXPECT_THROW(hop_latency(1, 0.0), std::invalid_argument);
}

TEST(TotalLatency, SumOfHopsAndIdentity) {
  const Topology p = topology_from_weights(3, {{0, 1, 0.5}, {1, 2, 0.25}});
  const BroadcastTree path = BroadcastTree::from_parents(0, {kNoNode, 0, 1});
  EXPECT_DOUBLE_EQ(total_latency(path, p, 8), 8 / 2.0 + 8 / 4.0);
  EXPECT_EQ(total_latency(BroadcastTree::from_parents(0, {kNoNode}), topology_from_weights(1, {}), 64), 0.0);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Topology t = generate_rgg(20, 0.6, 1.0, seed);
    for (NodeId m = 0; m < 20; ++m) {
      const BroadcastTree tree = build_tree(t, m, Scheme::p_clt, RoutingConfig{});
      const std::uint64_t bits = 123456789;
      const double a = total_latency(tree, t, bits);
      const double b = static_cast<double>(bits) * tree_cost(tree, t);
      EXPECT_NEAR(a, b, 1e-12 * b);
    }
  }
}

TEST(OptimalRetention, ClosedForm) {
  EXPECT_EQ(optimal_retention(1e-8, 100, 32, 2.0).r, 1.0);
  const RetentionDecision half = optimal_retention(1e-8, 12500000, 32, 2.0);  // K_bits = 4e8
  EXPECT_DOUBLE_EQ(half.r, 0.5);
  EXPECT_TRUE(half.feasible);
  EXPECT_DOUBLE_EQ(optimal_retention(1e-8, 12500000, 32, 1.0).r, 0.25);
  const RetentionDecision hopeless = optimal_retention(1.0, 1000, 32, 2.0);
  EXPECT_FALSE(hopeless.feasible);
  EXPECT_THROW(optimal_retention(0.0, 10, 32, 2.0), std::invalid_argument);
}

TEST(OptimalRetention, Monotone) {
  double prev = 2.0;
  for (double c = 1e-9; c < 1e-6; c *= 1.5) {
    const double r = optimal_retention(c, 1000000, 32, 2.0).r;
    EXPECT_LE(r, prev);
    prev = r;
  }
  prev = 0.0;
  for (double tm = 0.1; tm < 10.0; tm += 0.3) {
    const double r = optimal_retention(1e-8, 1000000, 32, tm).r;
    EXPECT_GE(r, prev);
    prev = r;
  }
}

TEST(OptimalRetention, RoundedPayloadMeetsDeadline) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Topology t = generate_rgg(20, 0.6, 1.0, seed);
    for (NodeId m = 0; m < 20; ++m) {
      const BroadcastTree tree = build_tree(t, m, Scheme::kruskal, RoutingConfig{});
      const std::uint64_t K = 11690000;
      const double r = optimal_retention(tree_cost(tree, t), K, 32, 2.0).r;
      const std::uint64_t bits = static_cast<std::uint64_t>(std::floor(r * static_cast<double>(K))) * 32;
      EXPECT_LE(total_latency(tree, t, bits), 2.0 + 1e-9);
    }
  }
}

TEST(Tdma, SmallGraphs) {
  const Topology path = topology_from_weights(3, {{0, 1, 1.0}, {1, 2, 1.0}});
  EXPECT_EQ(tdma_schedule(path, 1, 2.0).colors_used, 2);
  const Topology tri = topology_from_weights(3, {{0, 1, 1.0}, {1, 2, 1.0}, {0, 2, 1.0}});
  EXPECT_EQ(tdma_schedule(tri, 1, 2.0).colors_used, 3);
  EXPECT_FALSE(oracle::edge_colorable({{0, 1}, {1, 2}, {0, 2}}, 2));
  EXPECT_TRUE(oracle::edge_colorable({{0, 1}, {1, 2}, {0, 2}}, 3));
  std::vector<std::tuple<NodeId, NodeId, double>> star;
  for (int i = 1; i <= 6; ++i) star.emplace_back(0, i, 1.0);
  EXPECT_EQ(tdma_schedule(topology_from_weights(7, star), 1, 2.0).colors_used, 6);
}

TEST(Tdma, ProperAndBounded) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Topology t = generate_rgg(20, 0.6, 1.0, seed);
    const Schedule s = tdma_schedule(t, 2, 1.0);
    EXPECT_TRUE(is_proper_coloring(s, t));
    EXPECT_LE(s.colors_used, 2 * t.max_degree() - 1);
    for (int n = 0; n < 20; ++n) EXPECT_EQ(s.slot_of_client[n], n);
  }
}

TEST(Tdma, DetectsImproperColoring) {
  const Topology path = topology_from_weights(3, {{0, 1, 1.0}, {1, 2, 1.0}});
  Schedule s = tdma_schedule(path, 1, 2.0);
  s.edge_color = {0, 0};
  EXPECT_FALSE(is_proper_coloring(s, path));
}

TEST(Tdma, Json) {
  const Topology t = generate_rgg(6, 0.8, 1.0, 1);
  const auto j = schedule_to_json(tdma_schedule(t, 1, 2.0), t);
  EXPECT_TRUE(j.contains("colors_used"));
  EXPECT_TRUE(j.contains("schema"));
}

TEST(LatencyBudget, Validation) {
  EXPECT_NO_THROW((LatencyBudget{2.0, 1.0, 2}.validate()));
  EXPECT_THROW((LatencyBudget{2.0, 1.5, 2}.validate()), std::invalid_argument);
  EXPECT_THROW((LatencyBudget{2.0, 2.0, 0}.validate()), std::invalid_argument);
  const LatencyBudget b = LatencyBudget::from_t_max(3.0);
  EXPECT_EQ(b.frames, 1);
  EXPECT_EQ(b.slot_s, 3.0);
}
