#include "dfl/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dfl/linkschedule.hpp"

namespace dfl {

BoundParams BoundParams::from_weights(double L, double mu, double eta_lr, double tau_rho, const ClientWeights& w) {
  BoundParams b{L, mu, eta_lr, tau_rho, w.max(), w.sum_sq()};
  b.validate();
  return b;
}

void BoundParams::validate() const {
  if (!(mu > 0.0) || !(L >= mu)) throw std::invalid_argument("bound params: need L >= mu > 0 (strongly convex task)");
  if (!(eta_lr > 0.0)) throw std::invalid_argument("bound params: learning rate must be > 0");
  if (!(tau_rho > 0.0)) throw std::invalid_argument("bound params: tau_rho must be > 0");
  if (!(p_max > 0.0) || !(sum_p_sq > 0.0)) throw std::invalid_argument("bound params: weights must be positive");
}

double coeff_bound_counts(std::span<const std::size_t> counts, const ClientWeights& weights, std::size_t K,
                         int receiver) {
  if (static_cast<int>(counts.size()) != weights.size()) throw std::invalid_argument("coeff_bound: size mismatch");
  double first = 0.0;
  double missing = 0.0;
  for (int l = 0; l < weights.size(); ++l) {
    if (l == receiver) continue;
    if (counts[l] > K) throw std::invalid_argument("coeff_bound: count exceeds K");
    const double gap = static_cast<double>(K - counts[l]);
    first += gap * weights.p[l] * weights.p[l];
    missing += gap;
  }
  return first + missing * missing;
}

double coeff_bound(std::span<const double> retention, const ClientWeights& weights, std::size_t K, int receiver) {
  std::vector<std::size_t> counts;
  counts.reserve(retention.size());
  for (double r : retention) {
    if (!(r > 0.0) || r > 1.0) throw std::invalid_argument("coeff_bound: retention must lie in (0, 1]");
    counts.push_back(static_cast<std::size_t>(std::floor(r * static_cast<double>(K))));
  }
  return coeff_bound_counts(counts, weights, K, receiver);
}

double coeff_sq_sum(const std::vector<std::vector<std::uint8_t>>& indicators, const ClientWeights& weights,
                             int receiver, std::size_t K) {
  const std::vector<double> own(K, 0.0);
  const std::vector<double> none;
  ReceivedSet set;
  set.receiver = receiver;
  for (int m = 0; m < weights.size(); ++m) {
    const bool self = m == receiver;
    set.models.emplace_back(self || !indicators[m].empty() ? std::span<const double>(own) : std::span<const double>(none));
    set.indicators.emplace_back(self ? std::span<const std::uint8_t>() : std::span<const std::uint8_t>(indicators[m]));
  }
  double total = 0.0;
  for (const auto& row : lambda_coeffs(set, weights)) {
    for (double x : row) total += x * x;
  }
  return total;
}

double one_round_bound(const BoundParams& b, double dist2_prev, double bias_prev) {
  const double eL = b.eta_lr * b.L;
  const double contraction = 1.0 - 2.0 * b.mu * b.eta_lr + eL * eL;
  const double bias_coeff = (1.0 + eL) / b.tau_rho * (b.sum_p_sq + eL * b.p_max);
  return (1.0 + b.tau_rho) * (contraction * dist2_prev + bias_coeff * bias_prev);
}

OneRoundReport one_round_check(std::span<const double> dist2, std::span<const double> bias, const BoundParams& params) {
  params.validate();
  if (dist2.size() != bias.size()) throw std::invalid_argument("one_round_check: series lengths differ");
  OneRoundReport report;
  for (std::size_t a = 1; a < dist2.size(); ++a) {
    OneRoundRow row;
    row.round = static_cast<int>(a);
    row.lhs = dist2[a];
    row.rhs = one_round_bound(params, dist2[a - 1], bias[a - 1]);
    row.holds = row.lhs <= row.rhs * (1.0 + kOneRoundRelTol) + 1e-300;
    if (!row.holds) ++report.violations;
    report.rows.push_back(row);
  }
  return report;
}

OneRoundReport one_round_check(std::span<const OneRoundStep> trajectory, std::span<const double> optimum,
                          const BoundParams& params) {
  std::vector<double> dist2;
  std::vector<double> bias;
  for (const OneRoundStep& step : trajectory) {
    if (step.global.size() != optimum.size()) throw std::invalid_argument("one_round_check: model length mismatch");
    double d = 0.0;
    for (std::size_t k = 0; k < optimum.size(); ++k) d += (step.global[k] - optimum[k]) * (step.global[k] - optimum[k]);
    dist2.push_back(d);
    bias.push_back(step.bias_norm_sum);
  }
  return one_round_check(dist2, bias, params);
}

ReductionIdentity retention_reduction_identity(const BroadcastTree& tree, const Topology& topology, std::uint64_t k_bits,
                                        double t_max_s) {
  if (k_bits == 0 || !(t_max_s > 0.0)) throw std::invalid_argument("retention_reduction_identity: bad budget");
  ReductionIdentity out;
  const double cost = tree_cost(tree, topology);
  out.r_from_cost = std::min(1.0, t_max_s / (static_cast<double>(k_bits) * cost));
  const double full_time = total_latency(tree, topology, k_bits);
  out.r_from_latency = std::min(1.0, t_max_s / full_time);
  out.equal = std::abs(out.r_from_cost - out.r_from_latency) <= 1e-12 * std::max(out.r_from_cost, out.r_from_latency);
  return out;
}

}  // namespace dfl
