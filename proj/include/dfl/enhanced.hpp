#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "dfl/netgen.hpp"
#include "dfl/pruner.hpp"
#include "dfl/routing.hpp"

namespace dfl {

enum class ParamPriority { layer_ascending, layer_descending };

// Bandwidth-limited nodes relay at most bw_cap * K elements per payload.
// Forwarding-limited nodes relay at most fwd_budget sender models per round.
struct BottleneckConfig {
  std::vector<NodeId> bw_limited;
  double bw_cap = 0.8;
  std::vector<NodeId> fwd_limited;
  int fwd_budget = 6;
  bool cam = false;
  bool fpsr = false;
  ParamPriority priority = ParamPriority::layer_ascending;

  void validate(int node_count) const;
  bool is_bw_limited(NodeId n) const;
  bool is_fwd_limited(NodeId n) const;
  std::size_t cap_elements(std::size_t K) const;
};

// Standard bottleneck scenario: bw {0, 17} capped at 0.8 K, fwd {2, 5, 16}
// with six forwarding rounds each.
BottleneckConfig default_bottleneck();

struct CamDecision {
  BroadcastTree tree;
  double cost = 0.0;
  double retention = 1.0;
  double traverse_retention = 1.0;
  double detour_retention = 0.0;
  bool detour = false;
  bool detour_infeasible = false;
  bool feasible = true;
};

// Chooses between pushing a smaller payload through bandwidth-limited relays
// (traverse) and re-running P_CLT with those relays demoted to leaves
// (detour). Ties keep the traverse plan.
CamDecision cam_adjust(const Topology& topology, NodeId root, const BroadcastTree& tree,
                       const BottleneckConfig& config, const RoutingConfig& routing, std::uint64_t k_params,
                       std::uint64_t bits_per_param, double t_max_s);

// Flattened element indices of a plan in transmission priority order.
std::vector<std::size_t> priority_order(const ModelSpec& spec, const PruningPlan& plan, ParamPriority priority);

struct DeliveryOutcome {
  // Number of payload elements (a priority prefix) that reached each node.
  std::vector<std::size_t> received;
  double time_spent_s = 0.0;
  bool rerouted = false;
  bool reroute_failed = false;
  std::vector<NodeId> exhausted;  // forwarding-limited relays that ran out
};

// Per-round state shared by all deliveries: remaining forwarding budgets and
// a cache of reroute trees keyed by (sender, demoted set).
class DeliveryEngine {
 public:
  DeliveryEngine(const Topology& topology, BottleneckConfig config, RoutingConfig routing);

  void start_round();
  int budget_left(NodeId n) const { return budget_.at(n); }
  const BottleneckConfig& config() const { return config_; }

  // Broadcast payload_len elements of sender's model along tree. element_bits
  // is the number of bits one element costs on air; t_max bounds the total
  // airtime including any reroute.
  DeliveryOutcome deliver(NodeId sender, const BroadcastTree& tree, std::size_t payload_len, std::size_t K,
                          double element_bits, double t_max_s);

 private:
  struct Pass {
    std::vector<std::size_t> received;
    double time = 0.0;
    std::vector<NodeId> exhausted;
  };
  Pass run_pass(const BroadcastTree& tree, const std::vector<char>& active, std::size_t payload_len, std::size_t K,
                double element_bits, std::optional<double> time_left);
  const std::optional<BroadcastTree>& reroute_tree(NodeId sender, const std::vector<NodeId>& demoted);

  const Topology* topology_;
  BottleneckConfig config_;
  RoutingConfig routing_;
  std::vector<int> budget_;
  std::map<std::pair<NodeId, std::vector<NodeId>>, std::optional<BroadcastTree>> cache_;
};

// Convenience wrapper: FPSR delivery of one payload with fresh budgets.
DeliveryOutcome fpsr_schedule(const Topology& topology, const BottleneckConfig& config, const RoutingConfig& routing,
                              NodeId sender, const BroadcastTree& tree, std::size_t payload_len, std::size_t K,
                              double element_bits, double t_max_s);

// Indicator row of length K with the first `count` elements of `order` set.
std::vector<std::uint8_t> prefix_indicator(std::span<const std::size_t> order, std::size_t count, std::size_t K);

}  // namespace dfl
