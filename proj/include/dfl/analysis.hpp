#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dfl/aggregator.hpp"
#include "dfl/netgen.hpp"
#include "dfl/routing.hpp"

namespace dfl {

struct BoundParams {
  double L = 1.0;
  double mu = 1.0;
  double eta_lr = 0.1;
  double tau_rho = 1.0;
  double p_max = 1.0;
  double sum_p_sq = 1.0;

  static BoundParams from_weights(double L, double mu, double eta_lr, double tau_rho, const ClientWeights& w);
  void validate() const;
};

// Closed-form bound on the coefficient deviations for receiver n with nominal counts floor(r_l K).
double coeff_bound(std::span<const double> retention, const ClientWeights& weights, std::size_t K, int receiver);
// Same bound for explicit per-sender retained counts (realized or delivered).
double coeff_bound_counts(std::span<const std::size_t> counts, const ClientWeights& weights, std::size_t K,
                         int receiver);

// Exact sum_k sum_m lambda^2 at receiver n. indicators[m] is sender m's row
// (empty = nothing arrived); the receiver's own row is ignored.
double coeff_sq_sum(const std::vector<std::vector<std::uint8_t>>& indicators, const ClientWeights& weights,
                             int receiver, std::size_t K);

// Right-hand side of the one-round bound given ||wbar_prev - w*||^2 and the
// bias sum at the previous round.
double one_round_bound(const BoundParams& params, double dist2_prev, double bias_prev);

struct OneRoundStep {
  std::vector<double> global;  // ideal global model of the trained models
  double bias_norm_sum = 0.0;  // sum_n ||local aggregate_n - global||^2 of the same round
};

struct OneRoundRow {
  int round = 0;
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = true;
};

struct OneRoundReport {
  std::vector<OneRoundRow> rows;
  int violations = 0;
};

// Relative slack allowed when comparing lhs with rhs.
inline constexpr double kOneRoundRelTol = 1e-10;

OneRoundReport one_round_check(std::span<const OneRoundStep> trajectory, std::span<const double> optimum,
                          const BoundParams& params);
// Scalar form over recorded squared distances to the optimum and bias sums.
OneRoundReport one_round_check(std::span<const double> dist2, std::span<const double> bias, const BoundParams& params);

struct ReductionIdentity {
  double r_from_cost = 0.0;
  double r_from_latency = 0.0;
  bool equal = false;
};

// Retention bound from min(1, t_max / (K_bits C)) versus inverting the
// latency constraint with floors relaxed, t_max / t(full model).
ReductionIdentity retention_reduction_identity(const BroadcastTree& tree, const Topology& topology, std::uint64_t k_bits,
                                        double t_max_s);

}  // namespace dfl
