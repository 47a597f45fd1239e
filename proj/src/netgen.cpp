#include "dfl/netgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>
#include <random>
#include <sstream>
#include <stdexcept>

#include "dfl/detail/disjoint_sets.hpp"
#include "dfl/detail/format.hpp"

namespace dfl {

namespace {

double dbm_to_watt(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

struct Pair {
  double dist_sq;
  NodeId u;
  NodeId v;
};

std::vector<Edge> edges_with_rates(const std::vector<Point>& pos,
                                   const std::vector<std::pair<NodeId, NodeId>>& pairs,
                                   const RadioParams& radio) {
  std::vector<Edge> edges;
  edges.reserve(pairs.size());
  for (auto [u, v] : pairs) {
    const double dx = pos[u].x - pos[v].x;
    const double dy = pos[u].y - pos[v].y;
    const double d = std::sqrt(dx * dx + dy * dy);
    const double rate = link_rate(d, radio);
    edges.push_back({u, v, rate, 1.0 / rate});
  }
  return edges;
}

}  // namespace

double RadioParams::tx_power_watt() const { return dbm_to_watt(tx_power_dbm); }

double RadioParams::noise_power_watt() const {
  return dbm_to_watt(noise_psd_dbm_per_hz) * bandwidth_hz;
}

void RadioParams::validate() const {
  if (!(carrier_freq_hz > 0.0) || !(bandwidth_hz > 0.0) || !(propagation_const > 0.0)) {
    throw std::invalid_argument("radio: frequencies, bandwidth and propagation constant must be > 0");
  }
  if (!std::isfinite(tx_power_dbm) || !std::isfinite(noise_psd_dbm_per_hz)) {
    throw std::invalid_argument("radio: power and noise density must be finite");
  }
  if (!(tx_power_watt() > 0.0) || !(noise_power_watt() > 0.0)) {
    throw std::invalid_argument("radio: linear power or noise underflows to zero");
  }
}

Topology::Topology(std::vector<Point> positions, std::vector<Edge> edges, double area_km,
                   std::uint64_t seed, bool repaired)
    : positions_(std::move(positions)),
      edges_(std::move(edges)),
      area_km_(area_km),
      seed_(seed),
      repaired_(repaired) {
  const int n = node_count();
  for (Edge& e : edges_) {
    if (e.u > e.v) std::swap(e.u, e.v);
    if (e.u == e.v) throw std::invalid_argument("topology: self-loop");
    if (e.u < 0 || e.v >= n) throw std::invalid_argument("topology: edge endpoint out of range");
    if (!(e.rate > 0.0) || !(e.weight > 0.0)) {
      throw std::invalid_argument("topology: edge rate and weight must be > 0");
    }
  }
  std::sort(edges_.begin(), edges_.end(),
            [](const Edge& a, const Edge& b) { return std::tie(a.u, a.v) < std::tie(b.u, b.v); });
  adjacency_.assign(n, {});
  edge_lookup_.assign(static_cast<std::size_t>(n) * n, -1);
  for (std::size_t i = 0; i < edges_.size(); ++i) {
    const Edge& e = edges_[i];
    int& slot = edge_lookup_[static_cast<std::size_t>(e.u) * n + e.v];
    if (slot != -1) throw std::invalid_argument("topology: duplicate edge");
    slot = static_cast<int>(i);
    edge_lookup_[static_cast<std::size_t>(e.v) * n + e.u] = static_cast<int>(i);
    adjacency_[e.u].push_back(e.v);
    adjacency_[e.v].push_back(e.u);
  }
  for (auto& adj : adjacency_) std::sort(adj.begin(), adj.end());
}

int Topology::edge_index(NodeId a, NodeId b) const {
  const int n = node_count();
  if (a < 0 || b < 0 || a >= n || b >= n) return -1;
  return edge_lookup_[static_cast<std::size_t>(a) * n + b];
}

bool Topology::has_edge(NodeId a, NodeId b) const { return edge_index(a, b) >= 0; }

double Topology::weight(NodeId a, NodeId b) const {
  const int idx = edge_index(a, b);
  if (idx < 0) throw std::out_of_range("topology: no edge between nodes");
  return edges_[idx].weight;
}

double Topology::rate(NodeId a, NodeId b) const {
  const int idx = edge_index(a, b);
  if (idx < 0) throw std::out_of_range("topology: no edge between nodes");
  return edges_[idx].rate;
}

int Topology::max_degree() const {
  int best = 0;
  for (const auto& adj : adjacency_) best = std::max(best, static_cast<int>(adj.size()));
  return best;
}

bool Topology::connected() const {
  const int n = node_count();
  if (n == 0) return true;
  std::vector<char> seen(n, 0);
  std::queue<NodeId> frontier;
  frontier.push(0);
  seen[0] = 1;
  int count = 1;
  while (!frontier.empty()) {
    const NodeId c = frontier.front();
    frontier.pop();
    for (NodeId nb : adjacency_[c]) {
      if (!seen[nb]) {
        seen[nb] = 1;
        ++count;
        frontier.push(nb);
      }
    }
  }
  return count == n;
}

double Topology::distance_km(NodeId a, NodeId b) const {
  const double dx = positions_.at(a).x - positions_.at(b).x;
  const double dy = positions_.at(a).y - positions_.at(b).y;
  return std::sqrt(dx * dx + dy * dy);
}

double channel_gain_sq(double distance_km, const RadioParams& radio) {
  if (!(distance_km > 0.0)) throw std::invalid_argument("channel_gain_sq: distance must be > 0");
  const double d_m = distance_km * 1000.0;
  const double h = radio.propagation_const / (4.0 * std::numbers::pi * d_m * radio.carrier_freq_hz);
  return h * h;
}

double snr(double distance_km, const RadioParams& radio) {
  return channel_gain_sq(distance_km, radio) * radio.tx_power_watt() / radio.noise_power_watt();
}

double link_rate(double distance_km, const RadioParams& radio) {
  return radio.bandwidth_hz * std::log2(1.0 + snr(distance_km, radio));
}

std::size_t target_edge_count(int n, double density) {
  const double pairs = static_cast<double>(n) * (n - 1) / 2.0;
  return static_cast<std::size_t>(std::floor(density * pairs + 1e-9));
}

Topology generate_rgg(int n, double density, double area_km, std::uint64_t seed,
                      const RadioParams& radio) {
  if (n < 2) throw std::invalid_argument("generate_rgg: need at least 2 nodes");
  if (!(density > 0.0) || density > 1.0) throw std::invalid_argument("generate_rgg: density must lie in (0, 1]");
  if (!(area_km > 0.0)) throw std::invalid_argument("generate_rgg: area must be > 0");
  radio.validate();
  const std::size_t target = target_edge_count(n, density);
  if (target < static_cast<std::size_t>(n - 1)) {
    throw std::invalid_argument("generate_rgg: density too low to permit a connected graph");
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coord(0.0, area_km);
  std::vector<Point> pos(n);
  for (auto& p : pos) {
    p.x = coord(rng);
    p.y = coord(rng);
  }

  std::vector<Pair> pairs;
  pairs.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (NodeId u = 0; u < n; ++u) {
    for (NodeId v = u + 1; v < n; ++v) {
      const double dx = pos[u].x - pos[v].x;
      const double dy = pos[u].y - pos[v].y;
      pairs.push_back({dx * dx + dy * dy, u, v});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    return std::tie(a.dist_sq, a.u, a.v) < std::tie(b.dist_sq, b.u, b.v);
  });

  detail::DisjointSets components(n);
  std::vector<std::pair<NodeId, NodeId>> chosen;
  for (std::size_t i = 0; i < target; ++i) {
    chosen.emplace_back(pairs[i].u, pairs[i].v);
    components.unite(pairs[i].u, pairs[i].v);
  }
  bool repaired = false;
  for (std::size_t i = target; i < pairs.size() && components.components() > 1; ++i) {
    if (components.unite(pairs[i].u, pairs[i].v)) {
      chosen.emplace_back(pairs[i].u, pairs[i].v);
      repaired = true;
    }
  }
  for (const auto& [u, v] : chosen) {
    if (pos[u].x == pos[v].x && pos[u].y == pos[v].y) {
      throw std::runtime_error("generate_rgg: coincident nodes produce a zero-length link");
    }
  }
  return Topology(pos, edges_with_rates(pos, chosen, radio), area_km, seed, repaired);
}

Topology with_radio(const Topology& topology, const RadioParams& radio) {
  radio.validate();
  std::vector<std::pair<NodeId, NodeId>> pairs;
  for (const Edge& e : topology.edges()) pairs.emplace_back(e.u, e.v);
  return Topology(topology.positions(), edges_with_rates(topology.positions(), pairs, radio),
                  topology.area_km(), topology.seed(), topology.repaired());
}

Topology topology_from_weights(int n, const std::vector<std::tuple<NodeId, NodeId, double>>& edges) {
  std::vector<Edge> out;
  for (const auto& [u, v, chi] : edges) out.push_back({u, v, 1.0 / chi, chi});
  // chi is authoritative here; rate is its reciprocal.
  return Topology(std::vector<Point>(n), std::move(out), 1.0, 0, false);
}

std::string topology_to_json(const Topology& t) {
  using detail::fmt17;
  std::ostringstream out;
  out << "{\"schema\":\"dfl-topology/1\",\"n\":" << t.node_count() << ",\"area_km\":" << fmt17(t.area_km())
      << ",\"seed\":" << t.seed() << ",\"positions\":[";
  for (int i = 0; i < t.node_count(); ++i) {
    if (i) out << ',';
    out << '[' << fmt17(t.positions()[i].x) << ',' << fmt17(t.positions()[i].y) << ']';
  }
  out << "],\"edges\":[";
  for (std::size_t i = 0; i < t.edges().size(); ++i) {
    const Edge& e = t.edges()[i];
    if (i) out << ',';
    out << '[' << e.u << ',' << e.v << ',' << fmt17(e.rate) << ',' << fmt17(e.weight) << ']';
  }
  out << "],\"repaired\":" << (t.repaired() ? "true" : "false") << "}\n";
  return out.str();
}

Topology topology_from_json(const nlohmann::json& doc) {
  if (doc.value("schema", std::string{}) != "dfl-topology/1") {
    throw std::invalid_argument("topology json: missing or unsupported schema tag");
  }
  const int n = doc.at("n").get<int>();
  std::vector<Point> pos;
  for (const auto& p : doc.at("positions")) pos.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  if (static_cast<int>(pos.size()) != n) throw std::invalid_argument("topology json: positions length != n");
  std::vector<Edge> edges;
  for (const auto& e : doc.at("edges")) {
    edges.push_back({e.at(0).get<NodeId>(), e.at(1).get<NodeId>(), e.at(2).get<double>(), e.at(3).get<double>()});
  }
  return Topology(std::move(pos), std::move(edges), doc.at("area_km").get<double>(),
                  doc.at("seed").get<std::uint64_t>(), doc.at("repaired").get<bool>());
}

Topology topology_from_json_text(const std::string& text) {
  return topology_from_json(nlohmann::json::parse(text));
}

}  // namespace dfl
