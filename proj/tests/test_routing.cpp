#include <gtest/gtest.h>

#include <random>

#include "dfl/routing.hpp"
#include "oracles.hpp"

using namespace dfl;

namespace {

Topology to_topology(int n, const std::vector<oracle::WEdge>& edges) {
  std::vector<std::tuple<NodeId, NodeId, double>> t;
  for (const auto& e : edges) t.emplace_back(e.u, e.v, e.w);
  return topology_from_weights(n, t);
}

double tree_weight(const BroadcastTree& tree, const Topology& topo) {
  std::vector<double> w;
  for (NodeId v = 0; v < tree.node_count(); ++v) {
    if (tree.parent(v) != kNoNode) w.push_back(topo.weight(v, tree.parent(v)));
  }
  return oracle::sorted_sum(w);
}

RoutingConfig absolute_theta(double theta, int iterations) {
  RoutingConfig c;
  c.theta = theta;
  c.iterations = iterations;
  c.theta_units = ThetaUnits::absolute;
  return c;
}

}  // namespace

TEST(Kruskal, PathGraphIsItsOwnTree) {
  const Topology t = topology_from_weights(4, {{0, 1, 3.0}, {1, 2, 1.0}, {2, 3, 2.0}});
  const BroadcastTree tree = kruskal_tree(t, 0);
  EXPECT_EQ(tree.parents(), (std::vector<NodeId>{kNoNode, 0, 1, 2}));
}

TEST(Kruskal, CycleDropsHeaviestEdge) {
  const Topology t = topology_from_weights(4, {{0, 1, 1.0}, {1, 2, 2.0}, {2, 3, 3.0}, {0, 3, 4.0}});
  const BroadcastTree tree = kruskal_tree(t, 0);
  for (NodeId v = 1; v < 4; ++v) {
    EXPECT_FALSE((v == 3 && tree.parent(v) == 0));
  }
  EXPECT_EQ(tree_weight(tree, t), 6.0);
}

TEST(Kruskal, K4MatchesEnumeration) {
  const std::vector<oracle::WEdge> e{{0, 1, 5}, {0, 2, 2}, {0, 3, 7}, {1, 2, 3}, {1, 3, 1}, {2, 3, 6}};
  ASSERT_EQ(oracle::spanning_trees(4, e).size(), 16u);
  const Topology t = to_topology(4, e);
  EXPECT_EQ(tree_weight(kruskal_tree(t, 2), t), oracle::min_spanning_weight(4, e));
}

TEST(Kruskal, RejectsDisconnected) {
  const Topology t = topology_from_weights(4, {{0, 1, 1.0}, {2, 3, 1.0}});
  EXPECT_THROW(kruskal_tree(t, 0), std::exception);
}

TEST(Kruskal, LeafOnlyNodesNeverRelay) {
  const Topology t = generate_rgg(12, 0.6, 1.0, 2);
  const BroadcastTree tree = kruskal_tree(t, 0, {3, 7});
  validate_tree(tree, t);
  EXPECT_TRUE(tree.children(3).empty());
  EXPECT_TRUE(tree.children(7).empty());
  // Node 1 as the only bridge: star with 1 in the middle cannot keep 1 a leaf.
  const Topology path = topology_from_weights(3, {{0, 1, 1.0}, {1, 2, 1.0}});
  EXPECT_THROW(kruskal_tree(path, 0, {1}), RoutingInfeasible);
}

TEST(Bellman, StarIsItself) {
  const Topology t = topology_from_weights(4, {{0, 1, 1.0}, {0, 2, 2.0}, {0, 3, 3.0}});
  EXPECT_EQ(bellman_spt(t, 0).parents(), (std::vector<NodeId>{kNoNode, 0, 0, 0}));
}

TEST(Bellman, TriangleTakesCheaperTwoHopPath) {
  // r=0, a=1, b=2
  const Topology t = topology_from_weights(3, {{0, 1, 1.0}, {0, 2, 3.0}, {1, 2, 1.0}});
  EXPECT_EQ(bellman_spt(t, 0).parent(2), 1);
  EXPECT_EQ(bellman_distances(t, 0)[2], 2.0);
}

TEST(Bellman, TieGoesToSmallerPredecessor) {
  const Topology t = topology_from_weights(4, {{0, 1, 1.0}, {0, 2, 1.0}, {1, 3, 1.0}, {2, 3, 1.0}});
  EXPECT_EQ(bellman_spt(t, 0).parent(3), 1);
}

TEST(Flood, StarAndPath) {
  const Topology star = topology_from_weights(4, {{0, 1, 1.0}, {0, 2, 2.0}, {0, 3, 4.0}});
  const BroadcastTree s = flood_tree(star, 0);
  EXPECT_EQ(s.parents(), (std::vector<NodeId>{kNoNode, 0, 0, 0}));
  EXPECT_EQ(tree_cost(s, star), 4.0);
  const Topology path = topology_from_weights(3, {{0, 1, 1.0}, {1, 2, 1.0}});
  EXPECT_EQ(flood_tree(path, 0).parents(), (std::vector<NodeId>{kNoNode, 0, 1}));
}

TEST(Flood, LevelsMatchBfsOracle) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    auto [n, edges] = oracle::random_small_graph(rng, 5, 5);
    const Topology t = to_topology(n, edges);
    const BroadcastTree tree = flood_tree(t, 0);
    const auto levels = oracle::bfs_levels(n, edges, 0);
    for (NodeId v = 0; v < n; ++v) EXPECT_EQ(tree.depth(v), levels[v]);
  }
}

TEST(Flood, PaysForEveryNeighbor) {
  // Triangle: root reaches both; node 1 also hears node 2 and pays for it.
  const Topology t = topology_from_weights(3, {{0, 1, 1.0}, {0, 2, 2.0}, {1, 2, 5.0}});
  const BroadcastTree tree = flood_tree(t, 0);
  EXPECT_EQ(tree_cost(tree, t), 2.0);
  EXPECT_TRUE(tree.has_group_override());
}

TEST(TreeCost, HandExamples) {
  const Topology path = topology_from_weights(3, {{0, 1, 2.0}, {1, 2, 3.0}});
  const BroadcastTree p = BroadcastTree::from_parents(0, {kNoNode, 0, 1});
  EXPECT_EQ(p.transmitters(), (std::vector<NodeId>{0, 1}));
  EXPECT_EQ(tree_cost(p, path), 5.0);
  const Topology star = topology_from_weights(4, {{0, 1, 1.0}, {0, 2, 4.0}, {0, 3, 2.0}});
  EXPECT_EQ(tree_cost(BroadcastTree::from_parents(0, {kNoNode, 0, 0, 0}), star), 4.0);
  const Topology single = topology_from_weights(1, {});
  EXPECT_EQ(tree_cost(BroadcastTree::from_parents(0, {kNoNode}), single), 0.0);
}

TEST(NodePriority, ChildrenCount) {
  const BroadcastTree star = BroadcastTree::from_parents(0, {kNoNode, 0, 0, 0, 0});
  const auto q = node_priority(star);
  EXPECT_EQ(q[0], 4);
  for (int i = 1; i < 5; ++i) EXPECT_EQ(q[i], 0);
  const BroadcastTree path = BroadcastTree::from_parents(0, {kNoNode, 0, 1});
  EXPECT_EQ(node_priority(path), (std::vector<int>{1, 1, 0}));
  EXPECT_EQ(node_priority(path, PriorityMeasure::tree_degree), (std::vector<int>{1, 2, 1}));
}

TEST(ModifyLinks, ThetaStageReparentsCheapLink) {
  const Topology t = topology_from_weights(3, {{0, 1, 1.0}, {1, 2, 5.0}, {0, 2, 1.05}});
  const BroadcastTree start = BroadcastTree::from_parents(0, {kNoNode, 0, 1});
  EXPECT_EQ(tree_cost(start, t), 6.0);
  const BroadcastTree out = modify_links(start, t, LinkCondition::theta, absolute_theta(0.1, 1));
  EXPECT_EQ(out.parent(2), 0);
  EXPECT_DOUBLE_EQ(tree_cost(out, t), 1.05);
}

TEST(ModifyLinks, NoAddableLinkIsFixedPoint) {
  const Topology t = topology_from_weights(3, {{0, 1, 1.0}, {1, 2, 1.0}, {0, 2, 9.0}});
  const BroadcastTree start = BroadcastTree::from_parents(0, {kNoNode, 0, 1});
  EXPECT_EQ(modify_links(start, t, LinkCondition::theta, absolute_theta(0.1, 1)), start);
  EXPECT_EQ(modify_links(start, t, LinkCondition::max, absolute_theta(0.1, 1)), start);
}

TEST(ModifyLinks, StagesNeverIncreaseCost) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Topology t = generate_rgg(20, 0.6, 1.0, seed);
    RoutingConfig c;
    c.theta_units = ThetaUnits::relative;
    for (NodeId m = 0; m < 20; m += 3) {
      BroadcastTree tree = kruskal_tree(t, m);
      double cost = tree_cost(tree, t);
      tree = modify_links(tree, t, LinkCondition::theta, c);
      validate_tree(tree, t);
      EXPECT_LE(tree_cost(tree, t), cost);
      cost = tree_cost(tree, t);
      for (int psi = 0; psi < 3; ++psi) {
        tree = modify_links(tree, t, LinkCondition::max, c);
        validate_tree(tree, t);
        EXPECT_LE(tree_cost(tree, t), cost);
        cost = tree_cost(tree, t);
      }
    }
  }
}

TEST(Pclt, NoStagesEqualsMst) {
  const Topology t = generate_rgg(15, 0.6, 1.0, 11);
  RoutingConfig c;
  c.iterations = 0;
  c.use_condition_theta = false;
  for (NodeId m = 0; m < 15; ++m) EXPECT_EQ(p_clt(t, m, c).tree, kruskal_tree(t, m));
}

TEST(Pclt, ThreeNodeInstance) {
  const Topology t = topology_from_weights(3, {{0, 1, 1.0}, {1, 2, 5.0}, {0, 2, 1.05}});
  const PcltResult r = p_clt(t, 0, absolute_theta(0.1, 1));
  EXPECT_DOUBLE_EQ(tree_cost(r.tree, t), 1.05);
  EXPECT_LE(tree_cost(r.tree, t), tree_cost(kruskal_tree(t, 0), t));
}

TEST(Pclt, StageCostsNonIncreasingAndBelowMst) {
  for (std::uint64_t seed = 1; seed <= 15; ++seed) {
    const Topology t = generate_rgg(20, 0.6, 1.0, seed);
    for (NodeId m = 0; m < 20; ++m) {
      const PcltResult r = p_clt(t, m, RoutingConfig{});
      ASSERT_EQ(r.stage_costs.size(), 5u);
      for (std::size_t i = 1; i < r.stage_costs.size(); ++i) EXPECT_LE(r.stage_costs[i], r.stage_costs[i - 1]);
      EXPECT_EQ(r.stage_costs.front(), tree_cost(kruskal_tree(t, m), t));
      EXPECT_EQ(r.stage_costs.back(), tree_cost(r.tree, t));
      EXPECT_EQ(r.stages.size(), r.stage_costs.size());
    }
  }
}

TEST(Pclt, TransmittersInHopOrder) {
  const Topology t = generate_rgg(20, 0.6, 1.0, 5);
  const BroadcastTree tree = p_clt(t, 4, RoutingConfig{}).tree;
  std::vector<char> seen(20, 0);
  seen[4] = 1;
  for (NodeId i : tree.transmitters()) {
    EXPECT_FALSE(tree.children(i).empty());
    EXPECT_TRUE(seen[i]) << "transmitter " << i << " listed before its parent";
    for (NodeId c : tree.children(i)) seen[c] = 1;
  }
}

TEST(Schemes, AllProduceValidDeterministicTrees) {
  const Topology t = generate_rgg(20, 0.6, 1.0, 8);
  for (Scheme s : all_schemes()) {
    EXPECT_EQ(parse_scheme(scheme_name(s)), s);
    for (NodeId m = 0; m < 20; m += 5) {
      const BroadcastTree a = build_tree(t, m, s, RoutingConfig{});
      validate_tree(a, t);
      EXPECT_EQ(a.root(), m);
      EXPECT_EQ(a, build_tree(t, m, s, RoutingConfig{}));
    }
  }
  EXPECT_THROW(parse_scheme("dijkstra"), std::invalid_argument);
  EXPECT_EQ(parse_scheme("p_clt"), Scheme::p_clt);
}

TEST(Schemes, VariantFlags) {
  EXPECT_FALSE(variant_config(Scheme::np_clt, {}).use_node_priority);
  EXPECT_FALSE(variant_config(Scheme::theta_only, {}).use_condition_max);
  EXPECT_FALSE(variant_config(Scheme::max_only, {}).use_condition_theta);
  EXPECT_THROW(variant_config(Scheme::kruskal, {}), std::invalid_argument);
}

TEST(Oracles, SmallGraphsMatchEnumeration) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 80; ++trial) {
    auto [n, edges] = oracle::random_small_graph(rng, 2, 6);
    const Topology t = to_topology(n, edges);
    EXPECT_EQ(tree_weight(kruskal_tree(t, 0), t), oracle::min_spanning_weight(n, edges));
    for (NodeId root = 0; root < n; ++root) {
      const auto d = bellman_distances(t, root);
      const auto ref = oracle::shortest_paths(n, edges, root);
      for (NodeId v = 0; v < n; ++v) EXPECT_EQ(d[v], ref[v]);
      EXPECT_GE(tree_cost(p_clt(t, root, RoutingConfig{}).tree, t),
                oracle::min_broadcast_cost(n, edges, root));
    }
  }
}

TEST(TreeJson, Fields) {
  const Topology t = topology_from_weights(3, {{0, 1, 2.0}, {1, 2, 3.0}});
  const auto j = tree_to_json(BroadcastTree::from_parents(0, {kNoNode, 0, 1}), t);
  EXPECT_EQ(j["root"], 0);
  EXPECT_EQ(j["cost"], 5.0);
  EXPECT_EQ(j["transmitters"].size(), 2u);
  EXPECT_EQ(j["hops"][1]["max_chi"], 3.0);
}

TEST(Tree, ReparentAndValidate) {
  BroadcastTree tree = BroadcastTree::from_parents(0, {kNoNode, 0, 1, 2});
  tree.reparent(3, 0);
  EXPECT_EQ(tree.parent(3), 0);
  EXPECT_THROW(tree.reparent(0, 1), std::exception);
  const Topology t = topology_from_weights(4, {{0, 1, 1.0}, {1, 2, 1.0}, {2, 3, 1.0}});
  EXPECT_THROW(validate_tree(tree, t), std::invalid_argument);
}
