#include "dfl/aggregator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dfl {

ClientWeights ClientWeights::from_sizes(std::span<const std::size_t> sizes) {
  double total = 0.0;
  for (std::size_t d : sizes) total += static_cast<double>(d);
  if (!(total > 0.0)) throw std::invalid_argument("client weights: total data size must be > 0");
  ClientWeights w;
  for (std::size_t d : sizes) w.p.push_back(static_cast<double>(d) / total);
  w.validate();
  return w;
}

ClientWeights ClientWeights::uniform(int n) {
  if (n < 1) throw std::invalid_argument("client weights: need at least one client");
  return ClientWeights{std::vector<double>(n, 1.0 / n)};
}

void ClientWeights::validate() const {
  if (p.empty()) throw std::invalid_argument("client weights: empty");
  double sum = 0.0;
  for (double x : p) {
    if (!(x > 0.0)) throw std::invalid_argument("client weights: every p_n must be > 0");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw std::invalid_argument("client weights: must sum to 1");
}

double ClientWeights::max() const { return *std::max_element(p.begin(), p.end()); }

double ClientWeights::sum_sq() const {
  double s = 0.0;
  for (double x : p) s += x * x;
  return s;
}

std::size_t ReceivedSet::model_size() const {
  if (receiver < 0 || receiver >= static_cast<int>(models.size())) {
    throw std::invalid_argument("received set: receiver out of range");
  }
  return models[receiver].size();
}

bool ReceivedSet::delivered(int sender, std::size_t k) const {
  if (sender == receiver) return true;
  const auto& row = indicators[sender];
  return !row.empty() && row[k] != 0;
}

namespace {

std::size_t check_received(const ReceivedSet& received, const ClientWeights& weights) {
  const int n = weights.size();
  if (static_cast<int>(received.models.size()) != n || static_cast<int>(received.indicators.size()) != n) {
    throw std::invalid_argument("received set: sender count differs from weight count");
  }
  const std::size_t k = received.model_size();
  if (k == 0) throw std::invalid_argument("received set: receiver's own model is missing");
  for (int m = 0; m < n; ++m) {
    const bool any = !received.indicators[m].empty();
    if (m != received.receiver && any) {
      if (received.indicators[m].size() != k || received.models[m].size() != k) {
        throw std::invalid_argument("received set: sender row length != K");
      }
    }
  }
  return k;
}

}  // namespace

std::vector<double> local_aggregate(const ReceivedSet& received, const ClientWeights& weights,
                                    AggregationStats* stats) {
  const std::size_t K = check_received(received, weights);
  const int n = weights.size();
  std::vector<double> out(K);
  double worst = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    double den = 0.0;
    for (int m = 0; m < n; ++m) {
      if (received.delivered(m, k)) den += weights.p[m];
    }
    double value = 0.0;
    double coeff_sum = 0.0;
    for (int m = 0; m < n; ++m) {
      if (!received.delivered(m, k)) continue;
      const double coeff = weights.p[m] / den;
      value += coeff * received.models[m][k];
      coeff_sum += coeff;
    }
    out[k] = value;
    worst = std::max(worst, std::abs(coeff_sum - 1.0));
  }
  if (stats) stats->max_normalization_error = std::max(stats->max_normalization_error, worst);
  return out;
}

std::vector<double> ideal_global(std::span<const std::vector<double>> models, const ClientWeights& weights) {
  if (static_cast<int>(models.size()) != weights.size()) {
    throw std::invalid_argument("ideal_global: model count differs from weight count");
  }
  const std::size_t K = models.front().size();
  std::vector<double> out(K, 0.0);
  for (std::size_t m = 0; m < models.size(); ++m) {
    if (models[m].size() != K) throw std::invalid_argument("ideal_global: models differ in length");
    for (std::size_t k = 0; k < K; ++k) out[k] += weights.p[m] * models[m][k];
  }
  return out;
}

double bias_norm_sum(std::span<const std::vector<double>> locals, std::span<const double> global) {
  double total = 0.0;
  for (const auto& local : locals) {
    if (local.size() != global.size()) throw std::invalid_argument("bias_norm_sum: length mismatch");
    for (std::size_t k = 0; k < global.size(); ++k) {
      const double d = local[k] - global[k];
      total += d * d;
    }
  }
  return total;
}

std::vector<std::vector<double>> lambda_coeffs(const ReceivedSet& received, const ClientWeights& weights) {
  const std::size_t K = check_received(received, weights);
  const int n = weights.size();
  std::vector<std::vector<double>> lambda(n, std::vector<double>(K, 0.0));
  for (std::size_t k = 0; k < K; ++k) {
    double den = 0.0;
    for (int m = 0; m < n; ++m) {
      if (received.delivered(m, k)) den += weights.p[m];
    }
    for (int m = 0; m < n; ++m) {
      const double coeff = received.delivered(m, k) ? weights.p[m] / den : 0.0;
      lambda[m][k] = coeff - weights.p[m];
    }
  }
  return lambda;
}

}  // namespace dfl
