#include "dfl/enhanced.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dfl/linkschedule.hpp"

namespace dfl {

namespace {

bool contains(const std::vector<NodeId>& v, NodeId n) { return std::find(v.begin(), v.end(), n) != v.end(); }

void check_nodes(const std::vector<NodeId>& nodes, int n, const char* what) {
  for (NodeId x : nodes) {
    if (x < 0 || x >= n) throw std::invalid_argument(std::string("bottleneck: ") + what + " node out of range");
  }
}

}  // namespace

void BottleneckConfig::validate(int node_count) const {
  if (!(bw_cap > 0.0) || bw_cap > 1.0) throw std::invalid_argument("bottleneck: bw_cap must lie in (0, 1]");
  if (fwd_budget < 0) throw std::invalid_argument("bottleneck: fwd_budget must be >= 0");
  check_nodes(bw_limited, node_count, "bandwidth-limited");
  check_nodes(fwd_limited, node_count, "forwarding-limited");
}

bool BottleneckConfig::is_bw_limited(NodeId n) const { return contains(bw_limited, n); }
bool BottleneckConfig::is_fwd_limited(NodeId n) const { return contains(fwd_limited, n); }

std::size_t BottleneckConfig::cap_elements(std::size_t K) const {
  return static_cast<std::size_t>(std::floor(bw_cap * static_cast<double>(K) + 1e-9));
}

BottleneckConfig default_bottleneck() {
  BottleneckConfig c;
  c.bw_limited = {0, 17};
  c.bw_cap = 0.8;
  c.fwd_limited = {2, 5, 16};
  c.fwd_budget = 6;
  return c;
}

CamDecision cam_adjust(const Topology& topology, NodeId root, const BroadcastTree& tree,
                       const BottleneckConfig& config, const RoutingConfig& routing, std::uint64_t k_params,
                       std::uint64_t bits_per_param, double t_max_s) {
  config.validate(topology.node_count());
  CamDecision out;
  out.tree = tree;
  out.cost = tree_cost(tree, topology);
  const RetentionDecision plain = optimal_retention(out.cost, k_params, bits_per_param, t_max_s);
  bool capped = false;
  for (NodeId i : tree.transmitters()) capped = capped || config.is_bw_limited(i);
  out.traverse_retention = capped ? std::min(plain.r, config.bw_cap) : plain.r;
  out.retention = out.traverse_retention;
  out.feasible = plain.feasible;
  if (!capped) return out;

  RoutingConfig demoted = routing;
  for (NodeId b : config.bw_limited) {
    if (b != root && !contains(demoted.leaf_only, b)) demoted.leaf_only.push_back(b);
  }
  try {
    BroadcastTree detour = p_clt(topology, root, demoted).tree;
    const double cost = tree_cost(detour, topology);
    const RetentionDecision d = optimal_retention(cost, k_params, bits_per_param, t_max_s);
    out.detour_retention = config.is_bw_limited(root) ? std::min(d.r, config.bw_cap) : d.r;
    if (out.detour_retention > out.traverse_retention) {
      out.detour = true;
      out.tree = std::move(detour);
      out.cost = cost;
      out.retention = out.detour_retention;
      out.feasible = d.feasible;
    }
  } catch (const RoutingInfeasible&) {
    out.detour_infeasible = true;
  }
  return out;
}

std::vector<std::size_t> priority_order(const ModelSpec& spec, const PruningPlan& plan, ParamPriority priority) {
  std::vector<std::size_t> order;
  order.reserve(plan.retained_count);
  if (priority == ParamPriority::layer_ascending) return retained_positions(plan);
  for (int z = spec.layer_count() - 1; z >= 0; --z) {
    const std::size_t begin = spec.layer_offset(z);
    const std::size_t end = begin + spec.layer_param_count(z);
    for (std::size_t k = begin; k < end; ++k) {
      if (plan.indicator[k]) order.push_back(k);
    }
  }
  return order;
}

std::vector<std::uint8_t> prefix_indicator(std::span<const std::size_t> order, std::size_t count, std::size_t K) {
  if (count > order.size()) throw std::invalid_argument("prefix_indicator: count exceeds payload length");
  std::vector<std::uint8_t> row(K, 0);
  for (std::size_t i = 0; i < count; ++i) row.at(order[i]) = 1;
  return row;
}

DeliveryEngine::DeliveryEngine(const Topology& topology, BottleneckConfig config, RoutingConfig routing)
    : topology_(&topology), config_(std::move(config)), routing_(std::move(routing)) {
  config_.validate(topology.node_count());
  start_round();
}

void DeliveryEngine::start_round() {
  budget_.assign(topology_->node_count(), 0);
  for (NodeId n = 0; n < topology_->node_count(); ++n) {
    budget_[n] = config_.is_fwd_limited(n) ? config_.fwd_budget : -1;  // -1: unlimited
  }
}

const std::optional<BroadcastTree>& DeliveryEngine::reroute_tree(NodeId sender, const std::vector<NodeId>& demoted) {
  auto key = std::make_pair(sender, demoted);
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  RoutingConfig cfg = routing_;
  for (NodeId d : demoted) {
    if (d != sender && !contains(cfg.leaf_only, d)) cfg.leaf_only.push_back(d);
  }
  std::optional<BroadcastTree> tree;
  try {
    tree = p_clt(*topology_, sender, cfg).tree;
  } catch (const RoutingInfeasible&) {
    tree.reset();
  }
  return cache_.emplace(std::move(key), std::move(tree)).first->second;
}

DeliveryEngine::Pass DeliveryEngine::run_pass(const BroadcastTree& tree, const std::vector<char>& active,
                                              std::size_t payload_len, std::size_t K, double element_bits,
                                              std::optional<double> time_left) {
  const Topology& topo = *topology_;
  const int n = topo.node_count();
  const NodeId root = tree.root();
  const bool partial = time_left.has_value();

  // needed[x]: x's subtree holds a node that still wants the payload.
  std::vector<char> needed(n, 0);
  const auto& order = tree.hop_order();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const NodeId x = *it;
    if (active[x]) needed[x] = 1;
    for (NodeId c : tree.children(x)) needed[x] = needed[x] || needed[c];
  }
  auto hop_weight = [&](NodeId i) {
    if (!partial) return hop_max_weight(tree, topo, i);
    double w = 0.0;
    for (NodeId c : tree.children(i)) {
      if (needed[c]) w = std::max(w, topo.weight(i, c));
    }
    return w;
  };

  std::size_t len = payload_len;
  if (partial) {
    double cost = 0.0;
    for (NodeId i : tree.transmitters()) cost += hop_weight(i);
    len = cost > 0.0 ? std::min<std::size_t>(payload_len, static_cast<std::size_t>(
                                                             std::floor(*time_left / (element_bits * cost))))
                     : 0;
  }

  Pass pass;
  pass.received.assign(n, 0);
  pass.received[root] = len;
  const std::size_t cap = config_.cap_elements(K);
  for (NodeId i : tree.transmitters()) {
    const double w = hop_weight(i);
    if (w <= 0.0) continue;
    std::size_t send = pass.received[i];
    if (send > 0 && i != root && budget_[i] >= 0) {
      if (budget_[i] == 0) {
        pass.exhausted.push_back(i);
        send = 0;
      } else {
        --budget_[i];
      }
    }
    if (send > cap && config_.is_bw_limited(i)) send = config_.fpsr ? cap : 0;
    pass.time += static_cast<double>(send) * element_bits * w;
    for (NodeId c : tree.children(i)) {
      if (!partial || needed[c]) pass.received[c] = send;
    }
  }
  return pass;
}

DeliveryOutcome DeliveryEngine::deliver(NodeId sender, const BroadcastTree& tree, std::size_t payload_len,
                                        std::size_t K, double element_bits, double t_max_s) {
  if (tree.root() != sender) throw std::invalid_argument("deliver: tree is not rooted at the sender");
  const int n = topology_->node_count();
  const std::vector<char> everyone(n, 1);
  Pass primary = run_pass(tree, everyone, payload_len, K, element_bits, std::nullopt);

  DeliveryOutcome out;
  out.received = std::move(primary.received);
  out.time_spent_s = primary.time;
  out.exhausted = primary.exhausted;
  if (!config_.fpsr || primary.exhausted.empty()) return out;

  // Receivers cut off below an exhausted relay.
  std::vector<char> affected(n, 0);
  bool any = false;
  for (NodeId x = 0; x < n; ++x) {
    for (NodeId a = tree.parent(x); a != kNoNode; a = tree.parent(a)) {
      if (contains(primary.exhausted, a)) {
        affected[x] = 1;
        any = true;
        break;
      }
    }
  }
  if (!any) return out;

  std::vector<NodeId> demoted;
  for (NodeId x = 0; x < n; ++x) {
    if (budget_[x] == 0) demoted.push_back(x);
  }
  const std::optional<BroadcastTree>& alt = reroute_tree(sender, demoted);
  out.rerouted = true;
  if (!alt) {
    out.reroute_failed = true;
    return out;
  }
  const double time_left = std::max(0.0, t_max_s - primary.time);
  Pass second = run_pass(*alt, affected, payload_len, K, element_bits, time_left);
  out.time_spent_s += second.time;
  for (NodeId x : second.exhausted) {
    if (!contains(out.exhausted, x)) out.exhausted.push_back(x);
  }
  for (NodeId x = 0; x < n; ++x) {
    if (affected[x]) out.received[x] = std::max(out.received[x], second.received[x]);
  }
  return out;
}

DeliveryOutcome fpsr_schedule(const Topology& topology, const BottleneckConfig& config, const RoutingConfig& routing,
                              NodeId sender, const BroadcastTree& tree, std::size_t payload_len, std::size_t K,
                              double element_bits, double t_max_s) {
  BottleneckConfig cfg = config;
  cfg.fpsr = true;
  DeliveryEngine engine(topology, cfg, routing);
  return engine.deliver(sender, tree, payload_len, K, element_bits, t_max_s);
}

}  // namespace dfl
