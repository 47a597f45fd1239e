#include "dfl/linkschedule.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dfl {

void LatencyBudget::validate() const {
  if (!(t_max_s > 0.0) || !(slot_s > 0.0) || frames < 1) {
    throw std::invalid_argument("latency budget: t_max, slot length and frame count must be positive");
  }
  if (std::abs(t_max_s - slot_s * frames) > 1e-12 * t_max_s) {
    throw std::invalid_argument("latency budget: t_max must equal slot_s * frames");
  }
}

double bottleneck_rate(const BroadcastTree& tree, const Topology& topology, NodeId i) {
  const auto& group = tree.group(i);
  if (group.empty()) throw std::invalid_argument("bottleneck_rate: node has no broadcast group");
  double slowest = std::numeric_limits<double>::infinity();
  for (NodeId j : group) slowest = std::min(slowest, topology.rate(i, j));
  return slowest;
}

double hop_latency(std::uint64_t payload_bits, double bottleneck_rate_bps) {
  if (!(bottleneck_rate_bps > 0.0)) throw std::invalid_argument("hop_latency: rate must be > 0");
  return static_cast<double>(payload_bits) / bottleneck_rate_bps;
}

double total_latency(const BroadcastTree& tree, const Topology& topology, std::uint64_t payload_bits) {
  double t = 0.0;
  for (NodeId i : tree.transmitters()) t += hop_latency(payload_bits, bottleneck_rate(tree, topology, i));
  return t;
}

RetentionDecision optimal_retention(double tree_cost_s_per_bit, std::uint64_t k_params,
                                    std::uint64_t bits_per_param, double t_max_s) {
  if (!(tree_cost_s_per_bit > 0.0)) throw std::invalid_argument("optimal_retention: tree cost must be > 0");
  if (k_params == 0 || bits_per_param == 0) throw std::invalid_argument("optimal_retention: model size must be > 0");
  if (!(t_max_s > 0.0)) throw std::invalid_argument("optimal_retention: t_max must be > 0");
  const double full_time = static_cast<double>(k_params) * static_cast<double>(bits_per_param) * tree_cost_s_per_bit;
  RetentionDecision out;
  out.r = std::min(1.0, t_max_s / full_time);
  out.feasible = static_cast<double>(bits_per_param) * tree_cost_s_per_bit <= t_max_s;
  return out;
}

Schedule tdma_schedule(const Topology& topology, int frames, double slot_s) {
  if (frames < 1 || !(slot_s > 0.0)) throw std::invalid_argument("tdma_schedule: frames and slot length must be positive");
  const int n = topology.node_count();
  Schedule s;
  s.frames = frames;
  s.slot_s = slot_s;
  s.slot_of_client.resize(n);
  for (int i = 0; i < n; ++i) s.slot_of_client[i] = i;
  // colors already used at each endpoint
  std::vector<std::vector<char>> used(n);
  s.edge_color.reserve(topology.edges().size());
  for (const Edge& e : topology.edges()) {  // stored in lexicographic order
    int color = 0;
    auto taken = [&](NodeId x, int c) { return c < static_cast<int>(used[x].size()) && used[x][c]; };
    while (taken(e.u, color) || taken(e.v, color)) ++color;
    for (NodeId x : {e.u, e.v}) {
      if (static_cast<int>(used[x].size()) <= color) used[x].resize(color + 1, 0);
      used[x][color] = 1;
    }
    s.edge_color.push_back(color);
    s.colors_used = std::max(s.colors_used, color + 1);
  }
  return s;
}

bool is_proper_coloring(const Schedule& schedule, const Topology& topology) {
  const auto& edges = topology.edges();
  if (schedule.edge_color.size() != edges.size()) return false;
  const int n = topology.node_count();
  std::vector<std::vector<int>> seen(n);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const int c = schedule.edge_color[i];
    if (c < 0 || c >= schedule.colors_used) return false;
    for (NodeId x : {edges[i].u, edges[i].v}) {
      if (std::find(seen[x].begin(), seen[x].end(), c) != seen[x].end()) return false;
      seen[x].push_back(c);
    }
  }
  return true;
}

nlohmann::json schedule_to_json(const Schedule& schedule, const Topology& topology) {
  nlohmann::json slots = nlohmann::json::array();
  for (std::size_t n = 0; n < schedule.slot_of_client.size(); ++n) {
    slots.push_back({{"slot", schedule.slot_of_client[n]}, {"client", n}});
  }
  std::vector<nlohmann::json> colors(schedule.colors_used, nlohmann::json::array());
  for (std::size_t i = 0; i < topology.edges().size(); ++i) {
    const Edge& e = topology.edges()[i];
    colors[schedule.edge_color[i]].push_back({e.u, e.v});
  }
  nlohmann::json color_list = nlohmann::json::array();
  for (int c = 0; c < schedule.colors_used; ++c) color_list.push_back({{"color", c}, {"edges", colors[c]}});
  return {{"schema", "dfl-schedule/1"},
          {"frames", schedule.frames},
          {"slot_s", schedule.slot_s},
          {"t_max_s", schedule.slot_s * schedule.frames},
          {"colors_used", schedule.colors_used},
          {"slots", slots},
          {"colors", color_list}};
}

}  // namespace dfl
