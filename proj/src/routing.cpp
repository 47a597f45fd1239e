#include "dfl/routing.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>
#include <limits>
#include <numeric>
#include <queue>
#include <tuple>

#include "dfl/detail/disjoint_sets.hpp"

namespace dfl {

// ---------------------------------------------------------------------------
// BroadcastTree

BroadcastTree BroadcastTree::from_parents(NodeId root, std::vector<NodeId> parent) {
  const int n = static_cast<int>(parent.size());
  if (root < 0 || root >= n) throw std::invalid_argument("tree: root out of range");
  if (parent[root] != kNoNode) throw std::invalid_argument("tree: root must not have a parent");
  BroadcastTree t;
  t.root_ = root;
  t.parent_ = std::move(parent);
  for (NodeId v = 0; v < n; ++v) {
    if (v == root) continue;
    const NodeId p = t.parent_[v];
    if (p < 0 || p >= n || p == v) throw std::invalid_argument("tree: invalid parent entry");
  }
  t.rebuild();
  if (static_cast<int>(t.hop_order_.size()) != n) {
    throw std::invalid_argument("tree: parent links contain a cycle or do not reach the root");
  }
  return t;
}

void BroadcastTree::rebuild() {
  const int n = node_count();
  children_.assign(n, {});
  for (NodeId v = 0; v < n; ++v) {
    if (parent_[v] != kNoNode) children_[parent_[v]].push_back(v);
  }
  hop_order_.clear();
  transmitters_.clear();
  hop_order_.reserve(n);
  hop_order_.push_back(root_);
  for (std::size_t head = 0; head < hop_order_.size(); ++head) {
    const NodeId c = hop_order_[head];
    for (NodeId child : children_[c]) hop_order_.push_back(child);
    if (static_cast<int>(hop_order_.size()) > n) break;
  }
  for (NodeId c : hop_order_) {
    if (!children_[c].empty()) transmitters_.push_back(c);
  }
}

const std::vector<NodeId>& BroadcastTree::group(NodeId n) const {
  if (!group_override_.empty()) return group_override_.at(n);
  return children_.at(n);
}

bool BroadcastTree::is_ancestor(NodeId ancestor, NodeId node) const {
  for (NodeId x = node; x != kNoNode; x = parent_[x]) {
    if (x == ancestor) return true;
  }
  return false;
}

int BroadcastTree::depth(NodeId n) const {
  int d = 0;
  for (NodeId x = parent_.at(n); x != kNoNode; x = parent_[x]) ++d;
  return d;
}

void BroadcastTree::reparent(NodeId v, NodeId new_parent) {
  if (v == root_) throw std::invalid_argument("tree: cannot reparent the root");
  if (is_ancestor(v, new_parent)) throw std::invalid_argument("tree: reparent would create a cycle");
  parent_[v] = new_parent;
  group_override_.clear();
  rebuild();
}

void BroadcastTree::set_group_override(std::vector<std::vector<NodeId>> groups) {
  if (static_cast<int>(groups.size()) != node_count()) {
    throw std::invalid_argument("tree: group override size mismatch");
  }
  for (NodeId n = 0; n < node_count(); ++n) {
    if (children_[n].empty() != groups[n].empty()) {
      throw std::invalid_argument("tree: group override must keep the transmitter set");
    }
  }
  group_override_ = std::move(groups);
}

// ---------------------------------------------------------------------------
// Config and scheme names

void RoutingConfig::validate() const {
  if (!std::isfinite(theta) || theta < 0.0) throw std::invalid_argument("routing: theta must be finite and >= 0");
  if (iterations < 0) throw std::invalid_argument("routing: iterations must be >= 0");
}

namespace {

struct SchemeEntry {
  Scheme scheme;
  std::string_view name;
};

constexpr SchemeEntry kSchemes[] = {
    {Scheme::p_clt, "P_CLT"},           {Scheme::np_clt, "NP_CLT"},          {Scheme::p_nclt, "P_NCLT"},
    {Scheme::np_nclt, "NP_NCLT"},       {Scheme::theta_only, "THETA_ONLY"},     {Scheme::max_only, "MAX_ONLY"},
    {Scheme::kruskal, "KRUSKAL"},       {Scheme::bellman, "BELLMAN"},        {Scheme::flood, "FLOOD"},
};

}  // namespace

std::string_view scheme_name(Scheme s) {
  for (const auto& e : kSchemes) {
    if (e.scheme == s) return e.name;
  }
  return "?";
}

Scheme parse_scheme(std::string_view name) {
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  for (const auto& e : kSchemes) {
    if (e.name == upper) return e.scheme;
  }
  throw std::invalid_argument("unknown routing scheme: " + std::string(name));
}

const std::vector<Scheme>& all_schemes() {
  static const std::vector<Scheme> schemes = [] {
    std::vector<Scheme> out;
    for (const auto& e : kSchemes) out.push_back(e.scheme);
    return out;
  }();
  return schemes;
}

RoutingConfig variant_config(Scheme s, RoutingConfig base) {
  switch (s) {
    case Scheme::p_clt:
      base.use_node_priority = true;
      base.use_condition_theta = true;
      base.use_condition_max = true;
      base.use_theta_threshold = true;
      break;
    case Scheme::np_clt:
      base.use_node_priority = false;
      base.use_condition_theta = true;
      base.use_condition_max = true;
      base.use_theta_threshold = true;
      break;
    case Scheme::p_nclt:
      base.use_node_priority = true;
      base.use_condition_theta = true;
      base.use_condition_max = true;
      base.use_theta_threshold = false;
      break;
    case Scheme::np_nclt:
      base.use_node_priority = false;
      base.use_condition_theta = true;
      base.use_condition_max = true;
      base.use_theta_threshold = false;
      break;
    case Scheme::theta_only:
      base.use_node_priority = true;
      base.use_condition_theta = true;
      base.use_condition_max = false;
      base.use_theta_threshold = true;
      break;
    case Scheme::max_only:
      base.use_node_priority = true;
      base.use_condition_theta = false;
      base.use_condition_max = true;
      base.use_theta_threshold = true;
      break;
    default:
      throw std::invalid_argument("variant_config: scheme is not a P_CLT variant");
  }
  return base;
}

void validate_tree(const BroadcastTree& tree, const Topology& topology) {
  const int n = topology.node_count();
  if (tree.node_count() != n) throw std::invalid_argument("tree does not span the topology");
  int links = 0;
  for (NodeId v = 0; v < n; ++v) {
    const NodeId p = tree.parent(v);
    if (v == tree.root()) {
      if (p != kNoNode) throw std::invalid_argument("tree root has a parent");
      continue;
    }
    if (!topology.has_edge(v, p)) throw std::invalid_argument("tree uses a link absent from the topology");
    ++links;
  }
  if (links != n - 1 || static_cast<int>(tree.hop_order().size()) != n) {
    throw std::invalid_argument("tree is not a spanning tree");
  }
  std::vector<int> position(n, -1);
  for (std::size_t i = 0; i < tree.hop_order().size(); ++i) position[tree.hop_order()[i]] = static_cast<int>(i);
  for (NodeId v = 0; v < n; ++v) {
    if (v != tree.root() && position[tree.parent(v)] >= position[v]) {
      throw std::invalid_argument("tree hop order lists a node before its parent");
    }
    const bool listed = std::count(tree.transmitters().begin(), tree.transmitters().end(), v) > 0;
    if (tree.children(v).empty() == listed) {
      throw std::invalid_argument("tree transmitters differ from the non-leaf set");
    }
    for (NodeId g : tree.group(v)) {
      if (!topology.has_edge(v, g)) throw std::invalid_argument("broadcast group member out of range");
    }
  }
}

// ---------------------------------------------------------------------------
// Baseline trees

namespace {

std::vector<char> membership(int n, const std::vector<NodeId>& nodes) {
  std::vector<char> out(n, 0);
  for (NodeId x : nodes) {
    if (x < 0 || x >= n) throw std::invalid_argument("node id out of range");
    out[x] = 1;
  }
  return out;
}

BroadcastTree orient(const Topology& topology, NodeId root, const std::vector<std::pair<NodeId, NodeId>>& links) {
  const int n = topology.node_count();
  std::vector<std::vector<NodeId>> adj(n);
  for (auto [a, b] : links) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  std::vector<NodeId> parent(n, kNoNode);
  std::vector<char> seen(n, 0);
  std::queue<NodeId> frontier;
  frontier.push(root);
  seen[root] = 1;
  while (!frontier.empty()) {
    const NodeId c = frontier.front();
    frontier.pop();
    for (NodeId nb : adj[c]) {
      if (!seen[nb]) {
        seen[nb] = 1;
        parent[nb] = c;
        frontier.push(nb);
      }
    }
  }
  return BroadcastTree::from_parents(root, std::move(parent));
}

void require_root(const Topology& topology, NodeId root) {
  if (root < 0 || root >= topology.node_count()) throw std::invalid_argument("root out of range");
}

}  // namespace

BroadcastTree kruskal_tree(const Topology& topology, NodeId root, const std::vector<NodeId>& leaf_only) {
  require_root(topology, root);
  const int n = topology.node_count();
  if (!topology.connected()) throw std::invalid_argument("kruskal_tree: topology is disconnected");
  std::vector<char> leaf = membership(n, leaf_only);
  leaf[root] = 0;

  std::vector<int> order(topology.edges().size());
  std::iota(order.begin(), order.end(), 0);
  const auto& edges = topology.edges();
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return std::tie(edges[a].weight, edges[a].u, edges[a].v) < std::tie(edges[b].weight, edges[b].u, edges[b].v);
  });

  detail::DisjointSets sets(n);
  std::vector<std::pair<NodeId, NodeId>> links;
  int relay_nodes = 0;
  for (NodeId x = 0; x < n; ++x) relay_nodes += leaf[x] ? 0 : 1;
  for (int idx : order) {
    const Edge& e = edges[idx];
    if (leaf[e.u] || leaf[e.v]) continue;
    if (sets.unite(e.u, e.v)) links.emplace_back(e.u, e.v);
  }
  if (static_cast<int>(links.size()) != relay_nodes - 1) {
    throw RoutingInfeasible("kruskal_tree: relay-capable nodes are not connected");
  }
  // Leaf-only nodes hang off their cheapest relay-capable neighbor.
  for (NodeId x = 0; x < n; ++x) {
    if (!leaf[x]) continue;
    NodeId best = kNoNode;
    double best_w = std::numeric_limits<double>::infinity();
    for (NodeId nb : topology.neighbors(x)) {
      if (leaf[nb]) continue;
      const double w = topology.weight(x, nb);
      if (w < best_w) {
        best_w = w;
        best = nb;
      }
    }
    if (best == kNoNode) throw RoutingInfeasible("kruskal_tree: leaf-only node has no relay neighbor");
    links.emplace_back(x, best);
  }
  return orient(topology, root, links);
}

std::vector<double> bellman_distances(const Topology& topology, NodeId root) {
  require_root(topology, root);
  const int n = topology.node_count();
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  dist[root] = 0.0;
  for (int pass = 0; pass < n - 1; ++pass) {
    bool changed = false;
    for (const Edge& e : topology.edges()) {
      if (dist[e.u] + e.weight < dist[e.v]) {
        dist[e.v] = dist[e.u] + e.weight;
        changed = true;
      }
      if (dist[e.v] + e.weight < dist[e.u]) {
        dist[e.u] = dist[e.v] + e.weight;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return dist;
}

BroadcastTree bellman_spt(const Topology& topology, NodeId root) {
  if (!topology.connected()) throw std::invalid_argument("bellman_spt: topology is disconnected");
  const auto dist = bellman_distances(topology, root);
  const int n = topology.node_count();
  std::vector<NodeId> parent(n, kNoNode);
  for (NodeId v = 0; v < n; ++v) {
    if (v == root) continue;
    double best = std::numeric_limits<double>::infinity();
    for (NodeId u : topology.neighbors(v)) {  // ascending id: first minimum wins ties
      const double through = dist[u] + topology.weight(u, v);
      if (through < best) {
        best = through;
        parent[v] = u;
      }
    }
  }
  return BroadcastTree::from_parents(root, std::move(parent));
}

BroadcastTree flood_tree(const Topology& topology, NodeId root) {
  require_root(topology, root);
  if (!topology.connected()) throw std::invalid_argument("flood_tree: topology is disconnected");
  const int n = topology.node_count();
  std::vector<int> level(n, -1);
  std::vector<NodeId> parent(n, kNoNode);
  std::vector<NodeId> frontier{root};
  level[root] = 0;
  while (!frontier.empty()) {
    std::vector<NodeId> next;
    for (NodeId c : frontier) {
      for (NodeId nb : topology.neighbors(c)) {
        if (level[nb] == -1) {
          level[nb] = level[c] + 1;
          next.push_back(nb);
        }
      }
    }
    for (NodeId v : next) {
      for (NodeId u : topology.neighbors(v)) {
        if (level[u] == level[v] - 1) {
          parent[v] = u;  // smallest-id transmitter on the previous level
          break;
        }
      }
    }
    std::sort(next.begin(), next.end());
    frontier = std::move(next);
  }
  auto tree = BroadcastTree::from_parents(root, std::move(parent));
  std::vector<std::vector<NodeId>> groups(n);
  for (NodeId i : tree.transmitters()) groups[i] = topology.neighbors(i);
  tree.set_group_override(std::move(groups));
  return tree;
}

// ---------------------------------------------------------------------------
// Cost and priority

double hop_max_weight(const BroadcastTree& tree, const Topology& topology, NodeId i) {
  double best = 0.0;
  for (NodeId j : tree.group(i)) best = std::max(best, topology.weight(i, j));
  return best;
}

double tree_cost(const BroadcastTree& tree, const Topology& topology) {
  // Summed in node-id order so equal trees always produce identical bits.
  double total = 0.0;
  for (NodeId i = 0; i < tree.node_count(); ++i) {
    if (!tree.group(i).empty()) total += hop_max_weight(tree, topology, i);
  }
  return total;
}

std::vector<int> node_priority(const BroadcastTree& tree, PriorityMeasure measure) {
  std::vector<int> q(tree.node_count());
  for (NodeId i = 0; i < tree.node_count(); ++i) {
    q[i] = static_cast<int>(tree.children(i).size());
    if (measure == PriorityMeasure::tree_degree && tree.parent(i) != kNoNode) ++q[i];
  }
  return q;
}

// ---------------------------------------------------------------------------
// Link modification

BroadcastTree modify_links(BroadcastTree tree, const Topology& topology, LinkCondition condition,
                           const RoutingConfig& config) {
  config.validate();
  const int n = topology.node_count();
  validate_tree(tree, topology);
  const std::vector<char> leaf = membership(n, config.leaf_only);
  const std::vector<int> priority = node_priority(tree, config.priority);

  double theta = config.theta;
  if (config.theta_units == ThetaUnits::relative) {
    double max_w = 0.0;
    for (const Edge& e : topology.edges()) max_w = std::max(max_w, e.weight);
    theta *= max_w;
  }

  double cost = tree_cost(tree, topology);
  std::vector<char> processed(n, 0);
  int processed_count = 0;
  std::vector<NodeId> sources{tree.root()};

  while (processed_count < n) {
    std::vector<NodeId> wave;
    std::vector<char> queued(n, 0);
    auto enqueue = [&](NodeId x) {
      if (!processed[x] && !queued[x]) {
        queued[x] = 1;
        wave.push_back(x);
      }
    };

    for (NodeId c : sources) {
      if (processed[c]) continue;
      processed[c] = 1;
      ++processed_count;
      for (NodeId u : tree.children(c)) enqueue(u);
      if (leaf[c] && c != tree.root()) continue;

      std::vector<NodeId> candidates;
      for (NodeId v : topology.neighbors(c)) {
        if (tree.parent(v) != c && !tree.is_ancestor(v, c)) candidates.push_back(v);
      }
      std::sort(candidates.begin(), candidates.end(), [&](NodeId a, NodeId b) {
        return std::make_pair(topology.weight(c, a), a) < std::make_pair(topology.weight(c, b), b);
      });

      for (NodeId v : candidates) {
        if (tree.children(c).empty()) break;  // no reference link u
        if (tree.is_ancestor(v, c)) continue;
        const double w_new = topology.weight(c, v);
        const double w_ref = hop_max_weight(tree, topology, c);
        bool admissible = false;
        if (condition == LinkCondition::theta) {
          admissible = !config.use_theta_threshold || std::abs(w_new - w_ref) <= theta;
        } else {
          admissible = w_new <= w_ref;
        }
        if (!admissible) continue;
        BroadcastTree candidate = tree;
        candidate.reparent(v, c);
        const double candidate_cost = tree_cost(candidate, topology);
        if (candidate_cost > cost) continue;
        tree = std::move(candidate);
        cost = candidate_cost;
        enqueue(v);
      }
    }

    if (config.use_node_priority) {
      std::stable_sort(wave.begin(), wave.end(), [&](NodeId a, NodeId b) {
        return std::make_pair(-priority[a], a) < std::make_pair(-priority[b], b);
      });
    }
    if (wave.empty()) {
      for (NodeId x = 0; x < n; ++x) {
        if (!processed[x]) wave.push_back(x);
      }
    }
    sources = std::move(wave);
  }
  return tree;
}

PcltResult p_clt(const Topology& topology, NodeId root, const RoutingConfig& config) {
  config.validate();
  PcltResult out;
  BroadcastTree tree = kruskal_tree(topology, root, config.leaf_only);
  out.stage_costs.push_back(tree_cost(tree, topology));
  out.stages.push_back(tree);
  if (config.use_condition_theta) {
    tree = modify_links(std::move(tree), topology, LinkCondition::theta, config);
    out.stage_costs.push_back(tree_cost(tree, topology));
    out.stages.push_back(tree);
  }
  if (config.use_condition_max) {
    for (int psi = 0; psi < config.iterations; ++psi) {
      tree = modify_links(std::move(tree), topology, LinkCondition::max, config);
      out.stage_costs.push_back(tree_cost(tree, topology));
      out.stages.push_back(tree);
    }
  }
  out.tree = std::move(tree);
  return out;
}

BroadcastTree build_tree(const Topology& topology, NodeId root, Scheme scheme, const RoutingConfig& base) {
  switch (scheme) {
    case Scheme::kruskal:
      return kruskal_tree(topology, root, base.leaf_only);
    case Scheme::bellman:
      return bellman_spt(topology, root);
    case Scheme::flood:
      return flood_tree(topology, root);
    default:
      return p_clt(topology, root, variant_config(scheme, base)).tree;
  }
}

nlohmann::json tree_to_json(const BroadcastTree& tree, const Topology& topology) {
  nlohmann::json hops = nlohmann::json::array();
  for (NodeId i : tree.transmitters()) {
    hops.push_back({{"transmitter", i}, {"max_chi", hop_max_weight(tree, topology, i)}, {"group", tree.group(i)}});
  }
  nlohmann::json parent = nlohmann::json::array();
  for (NodeId p : tree.parents()) parent.push_back(p);
  return {{"root", tree.root()},
          {"parent", parent},
          {"cost", tree_cost(tree, topology)},
          {"transmitters", tree.transmitters()},
          {"hops", hops}};
}

}  // namespace dfl
