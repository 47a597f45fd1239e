#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

namespace dfl {

using NodeId = int;
inline constexpr NodeId kNoNode = -1;

// Radio and channel constants shared by every link of a topology.
struct RadioParams {
  double carrier_freq_hz = 2.5e9;
  double bandwidth_hz = 30e6;
  double tx_power_dbm = 20.0;
  double noise_psd_dbm_per_hz = -174.0;
  // Numerator of the free-space gain; with distances in meters this is c.
  double propagation_const = 3e8;

  double tx_power_watt() const;
  double noise_power_watt() const;
  void validate() const;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct Edge {
  NodeId u = 0;  // u < v
  NodeId v = 0;
  double rate = 0.0;    // bits/s
  double weight = 0.0;  // s/bit, exactly 1 / rate
};

// Undirected weighted client graph. Edges are stored sorted by (u, v).
class Topology {
 public:
  Topology() = default;
  Topology(std::vector<Point> positions, std::vector<Edge> edges, double area_km,
           std::uint64_t seed, bool repaired);

  int node_count() const { return static_cast<int>(positions_.size()); }
  const std::vector<Point>& positions() const { return positions_; }
  const std::vector<Edge>& edges() const { return edges_; }
  double area_km() const { return area_km_; }
  std::uint64_t seed() const { return seed_; }
  bool repaired() const { return repaired_; }

  // Neighbors of n in ascending id order.
  const std::vector<NodeId>& neighbors(NodeId n) const { return adjacency_.at(n); }
  bool has_edge(NodeId a, NodeId b) const;
  // Index into edges(), or -1 when (a, b) is not an edge.
  int edge_index(NodeId a, NodeId b) const;
  double weight(NodeId a, NodeId b) const;
  double rate(NodeId a, NodeId b) const;
  int degree(NodeId n) const { return static_cast<int>(adjacency_.at(n).size()); }
  int max_degree() const;
  bool connected() const;
  double distance_km(NodeId a, NodeId b) const;

 private:
  std::vector<Point> positions_;
  std::vector<Edge> edges_;
  std::vector<std::vector<NodeId>> adjacency_;
  std::vector<int> edge_lookup_;  // n*n, -1 when absent
  double area_km_ = 1.0;
  std::uint64_t seed_ = 0;
  bool repaired_ = false;
};

// h^2 = (lambda / (4 pi d f_c))^2 with d converted from km to meters.
double channel_gain_sq(double distance_km, const RadioParams& radio);
double snr(double distance_km, const RadioParams& radio);
// Shannon rate B log2(1 + gamma) in bits/s.
double link_rate(double distance_km, const RadioParams& radio);

// Number of edges requested by density rho before any connectivity repair.
std::size_t target_edge_count(int n, double density);

// Random geometric graph: nodes uniform in [0, area]^2, the closest
// floor(rho n(n-1)/2) pairs become edges, and the closest cross-component
// pairs are added (and flagged) if the result is disconnected.
Topology generate_rgg(int n, double density, double area_km, std::uint64_t seed,
                      const RadioParams& radio = {});

// Same node placement and edge set, rates recomputed for another radio.
Topology with_radio(const Topology& topology, const RadioParams& radio);

// Builds a topology from explicit edge weights (chi); rate = 1 / chi.
// Positions are left at the origin. Used for hand-built graphs.
Topology topology_from_weights(int n, const std::vector<std::tuple<NodeId, NodeId, double>>& edges);

std::string topology_to_json(const Topology& topology);
Topology topology_from_json(const nlohmann::json& doc);
Topology topology_from_json_text(const std::string& text);

}  // namespace dfl
