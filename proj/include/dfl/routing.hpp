#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dfl/netgen.hpp"

namespace dfl {

// Rooted spanning tree along which one client's model is broadcast.
//
// The broadcast group of a node is the set of nodes it transmits to in one
// hop. For ordinary trees that is its children; flood-fill trees override it
// with the full topology neighborhood (a flooding node reaches everyone in
// range). Transmitters are the nodes with a non-empty group, listed in
// breadth-first hop order from the root.
class BroadcastTree {
 public:
  BroadcastTree() = default;

  // parent[root] must be kNoNode; every other entry names the parent.
  static BroadcastTree from_parents(NodeId root, std::vector<NodeId> parent);

  NodeId root() const { return root_; }
  int node_count() const { return static_cast<int>(parent_.size()); }
  NodeId parent(NodeId n) const { return parent_.at(n); }
  const std::vector<NodeId>& parents() const { return parent_; }
  const std::vector<NodeId>& children(NodeId n) const { return children_.at(n); }
  const std::vector<NodeId>& group(NodeId n) const;
  const std::vector<NodeId>& transmitters() const { return transmitters_; }
  // Hop order used to list transmitters (breadth-first from the root).
  const std::vector<NodeId>& hop_order() const { return hop_order_; }
  bool has_group_override() const { return !group_override_.empty(); }

  bool is_ancestor(NodeId ancestor, NodeId node) const;
  int depth(NodeId n) const;

  // Moves v (and its subtree) under new_parent. v must not be an ancestor
  // of new_parent.
  void reparent(NodeId v, NodeId new_parent);

  // Replaces the broadcast group of every transmitter with override[n].
  void set_group_override(std::vector<std::vector<NodeId>> groups);

  friend bool operator==(const BroadcastTree& a, const BroadcastTree& b) {
    return a.root_ == b.root_ && a.parent_ == b.parent_ && a.group_override_ == b.group_override_;
  }

 private:
  void rebuild();

  NodeId root_ = kNoNode;
  std::vector<NodeId> parent_;
  std::vector<std::vector<NodeId>> children_;
  std::vector<NodeId> hop_order_;
  std::vector<NodeId> transmitters_;
  std::vector<std::vector<NodeId>> group_override_;
};

class RoutingInfeasible : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class PriorityMeasure { children, tree_degree };
enum class ThetaUnits { absolute, relative };
enum class LinkCondition { theta, max };

struct RoutingConfig {
  double theta = 0.1;
  int iterations = 3;
  bool use_node_priority = true;
  bool use_condition_theta = true;
  bool use_condition_max = true;
  // When false the theta stage still runs but accepts any link (no threshold).
  bool use_theta_threshold = true;
  PriorityMeasure priority = PriorityMeasure::children;
  // relative: theta is compared against |chi_v - chi_u| / max edge weight.
  ThetaUnits theta_units = ThetaUnits::absolute;
  // Nodes that may receive but never relay (no children).
  std::vector<NodeId> leaf_only;

  void validate() const;
};

enum class Scheme { p_clt, np_clt, p_nclt, np_nclt, theta_only, max_only, kruskal, bellman, flood };

std::string_view scheme_name(Scheme s);
Scheme parse_scheme(std::string_view name);
const std::vector<Scheme>& all_schemes();
// Flags of the P_CLT family member `s` applied on top of base.
RoutingConfig variant_config(Scheme s, RoutingConfig base);

void validate_tree(const BroadcastTree& tree, const Topology& topology);

BroadcastTree kruskal_tree(const Topology& topology, NodeId root,
                           const std::vector<NodeId>& leaf_only = {});
BroadcastTree bellman_spt(const Topology& topology, NodeId root);
// Bellman-Ford distances (sum of chi) from root.
std::vector<double> bellman_distances(const Topology& topology, NodeId root);
BroadcastTree flood_tree(const Topology& topology, NodeId root);

// Sum over transmitters of the max link weight in their broadcast group.
double tree_cost(const BroadcastTree& tree, const Topology& topology);
// Max chi over a transmitter's group (0 for a node with an empty group).
double hop_max_weight(const BroadcastTree& tree, const Topology& topology, NodeId i);

std::vector<int> node_priority(const BroadcastTree& tree,
                               PriorityMeasure measure = PriorityMeasure::children);

BroadcastTree modify_links(BroadcastTree tree, const Topology& topology, LinkCondition condition,
                           const RoutingConfig& config);

struct PcltResult {
  BroadcastTree tree;
  // Cost after MST init, after the theta stage (if run), after each max stage.
  std::vector<double> stage_costs;
  std::vector<BroadcastTree> stages;
};

PcltResult p_clt(const Topology& topology, NodeId root, const RoutingConfig& config);

BroadcastTree build_tree(const Topology& topology, NodeId root, Scheme scheme,
                         const RoutingConfig& base);

nlohmann::json tree_to_json(const BroadcastTree& tree, const Topology& topology);

}  // namespace dfl
