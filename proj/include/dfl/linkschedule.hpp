#pragma once

#include <cstdint>
#include <vector>

#include "dfl/netgen.hpp"
#include "dfl/routing.hpp"

namespace dfl {

// Per-round time budget of one client: J frames of one slot of length tau.
struct LatencyBudget {
  double t_max_s = 2.0;
  double slot_s = 2.0;
  int frames = 1;

  static LatencyBudget from_t_max(double t_max_s) { return {t_max_s, t_max_s, 1}; }
  void validate() const;
};

// Rate of the slowest link in transmitter i's broadcast group.
double bottleneck_rate(const BroadcastTree& tree, const Topology& topology, NodeId i);

double hop_latency(std::uint64_t payload_bits, double bottleneck_rate_bps);

// Sum of hop latencies over the tree's transmitters, in hop order.
double total_latency(const BroadcastTree& tree, const Topology& topology, std::uint64_t payload_bits);

struct RetentionDecision {
  double r = 1.0;
  // False when even a single parameter cannot reach every client in time.
  bool feasible = true;
};

// min(1, t_max / (K * bits_per_param * C)).
RetentionDecision optimal_retention(double tree_cost_s_per_bit, std::uint64_t k_params,
                                    std::uint64_t bits_per_param, double t_max_s);

struct Schedule {
  std::vector<int> slot_of_client;
  std::vector<int> edge_color;  // parallel to Topology::edges()
  int colors_used = 0;
  int frames = 1;
  double slot_s = 0.0;
};

// Greedy proper edge coloring in lexicographic edge order.
Schedule tdma_schedule(const Topology& topology, int frames, double slot_s);
bool is_proper_coloring(const Schedule& schedule, const Topology& topology);

nlohmann::json schedule_to_json(const Schedule& schedule, const Topology& topology);

}  // namespace dfl
