#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dfl/netgen.hpp"

namespace dfl {

// Ideal aggregation weights p_n = D_n / sum D.
struct ClientWeights {
  std::vector<double> p;

  static ClientWeights from_sizes(std::span<const std::size_t> sizes);
  static ClientWeights uniform(int n);
  void validate() const;
  double max() const;
  double sum_sq() const;
  int size() const { return static_cast<int>(p.size()); }
};

// What receiver n holds after one round of transmissions. Views only: the
// models and indicator rows are owned elsewhere and shared by all receivers.
// An empty indicator row means nothing from that sender arrived. The
// receiver's own row is always treated as all ones.
struct ReceivedSet {
  NodeId receiver = 0;
  std::vector<std::span<const double>> models;
  std::vector<std::span<const std::uint8_t>> indicators;

  std::size_t model_size() const;
  bool delivered(int sender, std::size_t k) const;
};

struct AggregationStats {
  // max over elements of |sum_m p_(m,n),k - 1|
  double max_normalization_error = 0.0;
};

std::vector<double> local_aggregate(const ReceivedSet& received, const ClientWeights& weights,
                                    AggregationStats* stats = nullptr);

std::vector<double> ideal_global(std::span<const std::vector<double>> models, const ClientWeights& weights);

double bias_norm_sum(std::span<const std::vector<double>> locals, std::span<const double> global);

// lambda[m][k] = p_(m,n),k - p_m
std::vector<std::vector<double>> lambda_coeffs(const ReceivedSet& received, const ClientWeights& weights);

}  // namespace dfl
