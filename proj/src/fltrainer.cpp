#include "dfl/fltrainer.hpp"

#include "dfl/analysis.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace dfl {

namespace {

enum : std::uint32_t { kTagData = 1, kTagInit = 2, kTagSgd = 3, kTagTest = 4 };

std::mt19937_64 stream(std::uint64_t seed, std::uint32_t tag, std::uint64_t a = 0, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag,
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::size_t> draw_sizes(const TaskConfig& config, int clients, std::mt19937_64& rng) {
  std::vector<std::size_t> sizes;
  std::uniform_real_distribution<double> jitter(1.0 - config.size_jitter, 1.0 + config.size_jitter);
  for (int n = 0; n < clients; ++n) {
    const double d = config.size_jitter > 0.0 ? config.samples_per_client * jitter(rng) : config.samples_per_client;
    sizes.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(d))));
  }
  return sizes;
}

double dot(const double* a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

std::string_view task_kind_name(TaskKind k) {
  return k == TaskKind::ridge_regression ? "ridge_regression" : "softmax_mlp";
}

TaskKind parse_task_kind(std::string_view name) {
  const std::string s = lower(name);
  if (s == "ridge_regression" || s == "ridge") return TaskKind::ridge_regression;
  if (s == "softmax_mlp" || s == "mlp") return TaskKind::softmax_mlp;
  throw std::invalid_argument("unknown task kind: " + std::string(name));
}

void TaskConfig::validate() const {
  if (samples_per_client < 1) throw std::invalid_argument("task: samples_per_client must be >= 1");
  if (size_jitter < 0.0 || size_jitter >= 1.0) throw std::invalid_argument("task: size_jitter must lie in [0, 1)");
  if (test_samples < 1) throw std::invalid_argument("task: test_samples must be >= 1");
  if (features < 1 || hidden < 1 || classes < 2) throw std::invalid_argument("task: bad mlp shape");
  if (dirichlet_alpha < 0.0) throw std::invalid_argument("task: dirichlet_alpha must be >= 0");
  if (batch_size < 0) throw std::invalid_argument("task: batch_size must be >= 0");
  if (!(learning_rate > 0.0) && !auto_learning_rate) throw std::invalid_argument("task: learning_rate must be > 0");
  if (local_epochs < 1) throw std::invalid_argument("task: local_epochs must be >= 1");
  if (regularizer < 0.0) throw std::invalid_argument("task: regularizer must be >= 0");
  if (!(noise >= 0.0)) throw std::invalid_argument("task: noise must be >= 0");
  if (auto_learning_rate && kind != TaskKind::ridge_regression) {
    throw std::invalid_argument("task: auto_learning_rate needs the ridge task");
  }
  ModelSpec check(ridge_channels);
  (void)check;
}

void Task::full_gradient(int n, std::span<const double> w, std::span<double> grad) const {
  std::vector<std::size_t> all(client_size(n));
  std::iota(all.begin(), all.end(), 0);
  gradient(n, w, all, grad);
}

// ---------------------------------------------------------------------------
// Ridge regression

RidgeTask::RidgeTask(const TaskConfig& config, int clients, std::uint64_t seed) {
  config.validate();
  spec_ = ModelSpec(config.ridge_channels);
  dim_ = static_cast<int>(spec_.total_params());
  reg_ = config.regularizer;
  auto rng = stream(seed, kTagData);
  sizes_ = draw_sizes(config, clients, rng);

  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> scale(dim_);
  for (int j = 0; j < dim_; ++j) scale[j] = 1.0 / std::sqrt(1.0 + 0.5 * j);
  std::vector<double> truth(dim_);
  for (double& t : truth) t = gauss(rng);

  auto sample = [&](std::vector<double>& xs, std::vector<double>& ys, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
      double y = 0.0;
      for (int j = 0; j < dim_; ++j) {
        const double x = scale[j] * gauss(rng);
        xs.push_back(x);
        y += x * truth[j];
      }
      ys.push_back(y + config.noise * gauss(rng));
    }
  };
  x_.resize(clients);
  y_.resize(clients);
  for (int n = 0; n < clients; ++n) sample(x_[n], y_[n], sizes_[n]);
  auto test_rng = stream(seed, kTagTest);
  std::swap(rng, test_rng);
  sample(test_x_, test_y_, config.test_samples);

  double total = 0.0;
  for (std::size_t d : sizes_) total += static_cast<double>(d);
  Eigen::MatrixXd pooled = Eigen::MatrixXd::Zero(dim_, dim_);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim_);
  L_ = 0.0;
  mu_ = std::numeric_limits<double>::infinity();
  for (int n = 0; n < clients; ++n) {
    const auto D = static_cast<Eigen::Index>(sizes_[n]);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> X(x_[n].data(), D, dim_);
    Eigen::Map<const Eigen::VectorXd> y(y_[n].data(), D);
    Eigen::MatrixXd H = X.transpose() * X / static_cast<double>(D);
    H.diagonal().array() += reg_;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(H, Eigen::EigenvaluesOnly);
    L_ = std::max(L_, eig.eigenvalues().maxCoeff());
    mu_ = std::min(mu_, eig.eigenvalues().minCoeff());
    const double p = static_cast<double>(D) / total;
    pooled += p * H;
    rhs += p * (X.transpose() * y) / static_cast<double>(D);
  }
  const Eigen::VectorXd opt = pooled.ldlt().solve(rhs);
  optimum_.assign(opt.data(), opt.data() + dim_);
}

std::vector<double> RidgeTask::initial_model(std::uint64_t seed) const {
  auto rng = stream(seed, kTagInit);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> w(dim_);
  for (double& x : w) x = gauss(rng);
  return w;
}

double RidgeTask::loss(int n, std::span<const double> w) const {
  double s = 0.0;
  for (std::size_t i = 0; i < sizes_[n]; ++i) {
    const double r = dot(&x_[n][i * dim_], w) - y_[n][i];
    s += r * r;
  }
  double reg = 0.0;
  for (double x : w) reg += x * x;
  return 0.5 * s / static_cast<double>(sizes_[n]) + 0.5 * reg_ * reg;
}

void RidgeTask::gradient(int n, std::span<const double> w, std::span<const std::size_t> batch,
                         std::span<double> grad) const {
  std::fill(grad.begin(), grad.end(), 0.0);
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i : batch) {
    const double* x = &x_[n][i * dim_];
    const double r = (dot(x, w) - y_[n][i]) * inv;
    for (int j = 0; j < dim_; ++j) grad[j] += r * x[j];
  }
  for (int j = 0; j < dim_; ++j) grad[j] += reg_ * w[j];
}

double RidgeTask::test_loss(std::span<const double> w) const {
  double s = 0.0;
  for (std::size_t i = 0; i < test_y_.size(); ++i) {
    const double r = dot(&test_x_[i * dim_], w) - test_y_[i];
    s += r * r;
  }
  return 0.5 * s / static_cast<double>(test_y_.size());
}

double RidgeTask::accuracy(std::span<const double> w) const {
  const double mean = std::accumulate(test_y_.begin(), test_y_.end(), 0.0) / static_cast<double>(test_y_.size());
  double sse = 0.0;
  double sst = 0.0;
  for (std::size_t i = 0; i < test_y_.size(); ++i) {
    const double r = dot(&test_x_[i * dim_], w) - test_y_[i];
    sse += r * r;
    sst += (test_y_[i] - mean) * (test_y_[i] - mean);
  }
  return 1.0 - sse / sst;
}

// ---------------------------------------------------------------------------
// Two-layer softmax MLP

MlpTask::MlpTask(const TaskConfig& config, int clients, std::uint64_t seed) {
  config.validate();
  in_ = config.features + 1;
  hidden_ = config.hidden;
  classes_ = config.classes;
  spec_ = ModelSpec({in_, hidden_, classes_});
  reg_ = config.regularizer;

  auto rng = stream(seed, kTagData);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<double>> means(classes_, std::vector<double>(config.features));
  for (auto& m : means) {
    for (double& v : m) v = config.class_separation * gauss(rng);
  }
  auto draw = [&](std::mt19937_64& g, int label, std::vector<double>& xs) {
    xs.push_back(1.0);
    for (int j = 0; j < config.features; ++j) xs.push_back(means[label][j] + config.noise * gauss(g));
  };

  labels_.assign(clients, {});
  if (config.dirichlet_alpha > 0.0) {
    const std::size_t total = static_cast<std::size_t>(config.samples_per_client) * clients;
    std::gamma_distribution<double> gamma(config.dirichlet_alpha, 1.0);
    for (int c = 0; c < classes_; ++c) {
      std::vector<double> q(clients);
      for (double& x : q) x = gamma(rng) + 1e-12;
      std::discrete_distribution<int> pick(q.begin(), q.end());
      const std::size_t count = total / classes_ + (static_cast<std::size_t>(c) < total % classes_ ? 1 : 0);
      for (std::size_t i = 0; i < count; ++i) labels_[pick(rng)].push_back(c);
    }
    for (int n = 0; n < clients; ++n) {
      while (labels_[n].empty()) {
        auto largest = std::max_element(labels_.begin(), labels_.end(),
                                        [](const auto& a, const auto& b) { return a.size() < b.size(); });
        labels_[n].push_back(largest->back());
        largest->pop_back();
      }
    }
  } else {
    const auto sizes = draw_sizes(config, clients, rng);
    std::uniform_int_distribution<int> label(0, classes_ - 1);
    for (int n = 0; n < clients; ++n) {
      for (std::size_t i = 0; i < sizes[n]; ++i) labels_[n].push_back(label(rng));
    }
  }
  x_.resize(clients);
  for (int n = 0; n < clients; ++n) {
    sizes_.push_back(labels_[n].size());
    for (int label : labels_[n]) draw(rng, label, x_[n]);
  }
  auto test_rng = stream(seed, kTagTest);
  for (int i = 0; i < config.test_samples; ++i) {
    test_labels_.push_back(i % classes_);
    draw(test_rng, i % classes_, test_x_);
  }
}

std::vector<double> MlpTask::initial_model(std::uint64_t seed) const {
  auto rng = stream(seed, kTagInit);
  std::vector<double> w(spec_.total_params());
  std::normal_distribution<double> first(0.0, std::sqrt(2.0 / in_));
  std::normal_distribution<double> second(0.0, std::sqrt(1.0 / hidden_));
  const std::size_t split = spec_.layer_offset(1);
  for (std::size_t k = 0; k < w.size(); ++k) w[k] = k < split ? first(rng) : second(rng);
  return w;
}

double MlpTask::sample_loss(const double* x, int label, std::span<const double> w, double* grad, double scale) const {
  const double* w1 = w.data();
  const double* w2 = w.data() + spec_.layer_offset(1);
  std::vector<double> pre(hidden_, 0.0);
  for (int i = 0; i < in_; ++i) {
    if (x[i] == 0.0) continue;
    const double* row = w1 + static_cast<std::size_t>(i) * hidden_;
    for (int j = 0; j < hidden_; ++j) pre[j] += x[i] * row[j];
  }
  std::vector<double> logits(classes_, 0.0);
  for (int j = 0; j < hidden_; ++j) {
    const double a = pre[j] > 0.0 ? pre[j] : 0.0;
    if (a == 0.0) continue;
    const double* row = w2 + static_cast<std::size_t>(j) * classes_;
    for (int c = 0; c < classes_; ++c) logits[c] += a * row[c];
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double& l : logits) {
    l = std::exp(l - top);
    z += l;
  }
  const double loss = -std::log(logits[label] / z);
  if (!grad) return loss;

  std::vector<double> dlogit(classes_);
  for (int c = 0; c < classes_; ++c) dlogit[c] = (logits[c] / z - (c == label ? 1.0 : 0.0)) * scale;
  double* g1 = grad;
  double* g2 = grad + spec_.layer_offset(1);
  std::vector<double> dpre(hidden_, 0.0);
  for (int j = 0; j < hidden_; ++j) {
    if (pre[j] <= 0.0) continue;
    const double* row = w2 + static_cast<std::size_t>(j) * classes_;
    double* grow = g2 + static_cast<std::size_t>(j) * classes_;
    double da = 0.0;
    for (int c = 0; c < classes_; ++c) {
      grow[c] += pre[j] * dlogit[c];
      da += row[c] * dlogit[c];
    }
    dpre[j] = da;
  }
  for (int i = 0; i < in_; ++i) {
    if (x[i] == 0.0) continue;
    double* grow = g1 + static_cast<std::size_t>(i) * hidden_;
    for (int j = 0; j < hidden_; ++j) grow[j] += x[i] * dpre[j];
  }
  return loss;
}

int MlpTask::predict(const double* x, std::span<const double> w) const {
  const double* w1 = w.data();
  const double* w2 = w.data() + spec_.layer_offset(1);
  std::vector<double> pre(hidden_, 0.0);
  for (int i = 0; i < in_; ++i) {
    const double* row = w1 + static_cast<std::size_t>(i) * hidden_;
    for (int j = 0; j < hidden_; ++j) pre[j] += x[i] * row[j];
  }
  std::vector<double> logits(classes_, 0.0);
  for (int j = 0; j < hidden_; ++j) {
    if (pre[j] <= 0.0) continue;
    const double* row = w2 + static_cast<std::size_t>(j) * classes_;
    for (int c = 0; c < classes_; ++c) logits[c] += pre[j] * row[c];
  }
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

double MlpTask::loss(int n, std::span<const double> w) const {
  double s = 0.0;
  for (std::size_t i = 0; i < sizes_[n]; ++i) s += sample_loss(&x_[n][i * in_], labels_[n][i], w, nullptr, 0.0);
  double reg = 0.0;
  for (double x : w) reg += x * x;
  return s / static_cast<double>(sizes_[n]) + 0.5 * reg_ * reg;
}

void MlpTask::gradient(int n, std::span<const double> w, std::span<const std::size_t> batch,
                       std::span<double> grad) const {
  std::fill(grad.begin(), grad.end(), 0.0);
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i : batch) sample_loss(&x_[n][i * in_], labels_[n][i], w, grad.data(), inv);
  for (std::size_t k = 0; k < w.size(); ++k) grad[k] += reg_ * w[k];
}

double MlpTask::test_loss(std::span<const double> w) const {
  double s = 0.0;
  for (std::size_t i = 0; i < test_labels_.size(); ++i) {
    s += sample_loss(&test_x_[i * in_], test_labels_[i], w, nullptr, 0.0);
  }
  return s / static_cast<double>(test_labels_.size());
}

double MlpTask::accuracy(std::span<const double> w) const {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < test_labels_.size(); ++i) {
    hits += predict(&test_x_[i * in_], w) == test_labels_[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(test_labels_.size());
}

std::unique_ptr<Task> make_task(const TaskConfig& config, int clients, std::uint64_t seed) {
  if (clients < 1) throw std::invalid_argument("make_task: need at least one client");
  if (config.kind == TaskKind::ridge_regression) return std::make_unique<RidgeTask>(config, clients, seed);
  return std::make_unique<MlpTask>(config, clients, seed);
}

ModelSpec task_model_spec(const TaskConfig& config) {
  if (config.kind == TaskKind::ridge_regression) return ModelSpec(config.ridge_channels);
  return ModelSpec({config.features + 1, config.hidden, config.classes});
}

// ---------------------------------------------------------------------------
// Local training

std::vector<double> local_update(std::span<const double> model, const Task& task, const TaskConfig& config,
                                 int client, std::uint64_t seed, int round) {
  if (model.size() != task.model_size()) throw std::invalid_argument("local_update: model length != K");
  for (double x : model) {
    if (!std::isfinite(x)) throw std::runtime_error("local_update: non-finite model entry");
  }
  std::vector<double> w(model.begin(), model.end());
  std::vector<double> grad(w.size());
  const std::size_t D = task.client_size(client);
  const std::size_t batch =
      config.batch_size == 0 ? D : std::min<std::size_t>(D, static_cast<std::size_t>(config.batch_size));
  std::vector<std::size_t> idx(D);
  std::iota(idx.begin(), idx.end(), 0);
  auto rng = stream(seed, kTagSgd, static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(client));
  for (int epoch = 0; epoch < config.local_epochs; ++epoch) {
    if (batch < D) std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t start = 0; start < D; start += batch) {
      const std::size_t len = std::min(batch, D - start);
      task.gradient(client, w, std::span<const std::size_t>(idx).subspan(start, len), grad);
      for (std::size_t k = 0; k < w.size(); ++k) {
        if (!std::isfinite(grad[k])) {
          throw std::runtime_error("local_update: non-finite gradient at client " + std::to_string(client) +
                                   ", round " + std::to_string(round));
        }
        w[k] -= config.learning_rate * grad[k];
        if (!std::isfinite(w[k])) {
          throw std::runtime_error("local_update: model diverged at client " + std::to_string(client) +
                                   ", round " + std::to_string(round));
        }
      }
    }
  }
  return w;
}

double jain_index(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("jain_index: empty input");
  double sum = 0.0;
  double sq = 0.0;
  for (double x : values) {
    if (!(x >= 0.0)) throw std::invalid_argument("jain_index: values must be non-negative");
    sum += x;
    sq += x * x;
  }
  if (!(sum > 0.0)) throw std::invalid_argument("jain_index: all values are zero");
  return sum * sum / (static_cast<double>(values.size()) * sq);
}

// ---------------------------------------------------------------------------
// Configuration

std::string_view policy_name(PruningPolicy p) {
  switch (p) {
    case PruningPolicy::optimal:
      return "optimal";
    case PruningPolicy::fixed:
      return "fixed";
    case PruningPolicy::none:
      return "none";
  }
  return "?";
}

PruningPolicy parse_policy(std::string_view name) {
  const std::string s = lower(name);
  if (s == "optimal") return PruningPolicy::optimal;
  if (s == "fixed") return PruningPolicy::fixed;
  if (s == "none") return PruningPolicy::none;
  throw std::invalid_argument("unknown pruning policy: " + std::string(name));
}

void PruningConfig::validate(int clients) const {
  if (policy != PruningPolicy::fixed) return;
  if (fixed_r.size() != 1 && static_cast<int>(fixed_r.size()) != clients) {
    throw std::invalid_argument("pruning: fixed_r needs one value or one per client");
  }
  for (double r : fixed_r) {
    if (!(r > 0.0) || r > 1.0) throw std::invalid_argument("pruning: fixed_r values must lie in (0, 1]");
  }
}

double PruningConfig::fixed_for(int client) const {
  return fixed_r.size() == 1 ? fixed_r.front() : fixed_r.at(client);
}

void BudgetConfig::validate() const {
  LatencyBudget{t_max_s, slot_s, frames}.validate();
  if (bits_per_param == 0 || param_scale == 0) throw std::invalid_argument("budget: bits and scale must be >= 1");
}

namespace {

bool clt_family(Scheme s) { return s != Scheme::kruskal && s != Scheme::bellman && s != Scheme::flood; }

}  // namespace

void SimulationConfig::validate() const {
  if (clients < 2) throw std::invalid_argument("simulation: need at least two clients");
  if (rounds < 0) throw std::invalid_argument("simulation: rounds must be >= 0");
  if (eval_every < 1) throw std::invalid_argument("simulation: eval_every must be >= 1");
  radio.validate();
  budget.validate();
  routing.validate();
  pruning.validate(clients);
  task.validate();
  if (bottleneck) {
    bottleneck->validate(clients);
    if ((bottleneck->cam || bottleneck->fpsr) && !clt_family(scheme)) {
      throw std::invalid_argument("simulation: CAM/FPSR require a P_CLT-family scheme");
    }
    if (bottleneck->cam && pruning.policy != PruningPolicy::optimal) {
      throw std::invalid_argument("simulation: CAM requires the optimal pruning policy");
    }
  }
}

// ---------------------------------------------------------------------------
// Simulation

Simulation::Simulation(SimulationConfig config) : config_(std::move(config)) {
  config_.validate();
  topology_ = generate_rgg(config_.clients, config_.density, config_.area_km, config_.seed, config_.radio);
  task_ = make_task(config_.task, config_.clients, config_.seed);
  if (config_.task.auto_learning_rate) {
    const auto& ridge = static_cast<const RidgeTask&>(*task_);
    config_.task.learning_rate = ridge.strong_convexity() / (ridge.smoothness() * ridge.smoothness());
  }
  weights_ = ClientWeights::from_sizes(task_->client_sizes());
  for (NodeId m = 0; m < config_.clients; ++m) {
    trees_.push_back(build_tree(topology_, m, config_.scheme, config_.routing));
    costs_.push_back(dfl::tree_cost(trees_.back(), topology_));
  }
  if (config_.bottleneck) {
    const RoutingConfig base = clt_family(config_.scheme) ? variant_config(config_.scheme, config_.routing)
                                                          : config_.routing;
    engine_.emplace(topology_, *config_.bottleneck, base);
  }
  plan_senders();
  const std::vector<double> init = task_->initial_model(config_.seed);
  aggregated_.assign(config_.clients, init);
  global_ = init;
}

void Simulation::plan_senders() {
  const BudgetConfig& b = config_.budget;
  const std::size_t K = task_->model_size();
  const std::uint64_t k_params = static_cast<std::uint64_t>(K) * b.param_scale;
  senders_.assign(config_.clients, {});
  r_star_.assign(config_.clients, 1.0);
  for (NodeId m = 0; m < config_.clients; ++m) {
    SenderPlan& s = senders_[m];
    bool feasible = true;
    if (config_.bottleneck && config_.bottleneck->cam) {
      const CamDecision d = cam_adjust(topology_, m, trees_[m], *config_.bottleneck,
                                       variant_config(config_.scheme, config_.routing), k_params, b.bits_per_param,
                                       b.t_max_s);
      trees_[m] = d.tree;
      costs_[m] = d.cost;
      r_star_[m] = d.retention;
      feasible = d.feasible;
      s.detour = d.detour;
    } else {
      const RetentionDecision d = optimal_retention(costs_[m], k_params, b.bits_per_param, b.t_max_s);
      r_star_[m] = d.r;
      feasible = d.feasible;
    }
    switch (config_.pruning.policy) {
      case PruningPolicy::optimal:
        s.retention = r_star_[m];
        break;
      case PruningPolicy::fixed:
        s.retention = config_.pruning.fixed_for(m);
        break;
      case PruningPolicy::none:
        s.retention = 1.0;
        break;
    }
    if (feasible) {
      try {
        s.plan = build_plan(task_->spec(), eta_from_retention(s.retention));
      } catch (const LayerFullyPruned&) {
        s.plan.reset();
      }
    }
    s.retained = s.plan ? s.plan->retained_count : 0;
    s.payload_bits = static_cast<std::uint64_t>(s.retained) * b.param_scale * b.bits_per_param;
    s.latency = total_latency(trees_[m], topology_, s.payload_bits);
    s.on_time = s.retained > 0 && s.latency <= b.t_max_s + 1e-9;
    if (s.plan) {
      const ParamPriority pr = config_.bottleneck ? config_.bottleneck->priority : ParamPriority::layer_ascending;
      s.order = priority_order(task_->spec(), *s.plan, pr);
    }
  }
}

RoundMetrics Simulation::step() {
  ++round_;
  const int N = config_.clients;
  const std::size_t K = task_->model_size();
  const ModelSpec& spec = task_->spec();

  std::vector<std::vector<double>> trained(N);
  for (int n = 0; n < N; ++n) {
    trained[n] = local_update(aggregated_[n], *task_, config_.task, n, config_.seed, round_);
  }
  global_ = ideal_global(trained, weights_);

  // received[m][n]: elements of m's payload that reached n.
  std::vector<std::vector<std::size_t>> received(N, std::vector<std::size_t>(N, 0));
  if (engine_) engine_->start_round();
  const double element_bits = static_cast<double>(config_.budget.param_scale * config_.budget.bits_per_param);
  for (int m = 0; m < N; ++m) {
    const SenderPlan& s = senders_[m];
    if (!s.on_time) continue;
    if (engine_) {
      received[m] = engine_->deliver(m, trees_[m], s.retained, K, element_bits, config_.budget.t_max_s).received;
    } else {
      std::fill(received[m].begin(), received[m].end(), s.retained);
    }
  }

  // What actually travels: the pruned payload through the wire format.
  std::vector<std::vector<double>> buffers(N);
  for (int m = 0; m < N; ++m) {
    if (!senders_[m].on_time) continue;
    const Payload sent = prune_payload(trained[m], *senders_[m].plan, static_cast<std::uint32_t>(m),
                                       static_cast<std::uint32_t>(round_));
    const Payload got = decode_payload(encode_payload(sent));
    buffers[m].assign(K, 0.0);
    reconstruct(got, spec, buffers[m]);
  }

  std::vector<std::map<std::size_t, std::vector<std::uint8_t>>> rows(N);
  auto row_for = [&](int m, std::size_t count) -> const std::vector<std::uint8_t>& {
    auto it = rows[m].find(count);
    if (it == rows[m].end()) it = rows[m].emplace(count, prefix_indicator(senders_[m].order, count, K)).first;
    return it->second;
  };

  RoundMetrics metrics;
  metrics.round = round_;
  AggregationStats stats;
  std::vector<std::vector<double>> next(N);
  std::vector<std::size_t> counts(N);
  std::vector<double> arrivals(N, 0.0);
  for (int n = 0; n < N; ++n) {
    ReceivedSet set;
    set.receiver = n;
    for (int m = 0; m < N; ++m) {
      const std::size_t c = m == n ? K : received[m][n];
      counts[m] = c;
      if (m == n) {
        set.models.emplace_back(trained[n]);
        set.indicators.emplace_back();
      } else if (c == 0) {
        set.models.emplace_back();
        set.indicators.emplace_back();
      } else {
        set.models.emplace_back(buffers[m]);
        set.indicators.emplace_back(row_for(m, c));
        arrivals[n] += static_cast<double>(c);
      }
    }
    next[n] = local_aggregate(set, weights_, &stats);
    double lhs = 0.0;
    for (const auto& col : lambda_coeffs(set, weights_)) {
      for (double x : col) lhs += x * x;
    }
    const double rhs = coeff_bound_counts(counts, weights_, K, n);
    metrics.coeff_max_lhs = std::max(metrics.coeff_max_lhs, lhs);
    metrics.coeff_max_rhs = std::max(metrics.coeff_max_rhs, rhs);
    if (lhs > rhs * (1.0 + 1e-12) + 1e-15) ++metrics.coeff_violations;
  }
  aggregated_ = std::move(next);
  metrics.max_normalization_error = stats.max_normalization_error;
  metrics.bias_norm_sum = bias_norm_sum(aggregated_, global_);
  const bool any_arrival = std::any_of(arrivals.begin(), arrivals.end(), [](double x) { return x > 0.0; });
  metrics.jain = any_arrival ? jain_index(arrivals) : 0.0;
  if (task_->kind() == TaskKind::ridge_regression) {
    const auto& opt = static_cast<const RidgeTask&>(*task_).optimum();
    for (std::size_t k = 0; k < K; ++k) metrics.global_dist2 += (global_[k] - opt[k]) * (global_[k] - opt[k]);
  }

  for (int m = 0; m < N; ++m) {
    const SenderPlan& s = senders_[m];
    ClientRound c;
    c.client = m;
    c.cost = costs_[m];
    c.retention = s.retention;
    c.retained = s.retained;
    c.payload_bits = s.payload_bits;
    c.latency_s = s.latency;
    c.delivered = s.on_time;
    c.detour = s.detour;
    metrics.clients.push_back(c);
    if (!config_.bottleneck || !s.on_time) continue;
    for (int n = 0; n < N; ++n) {
      if (n == m || received[m][n] >= s.retained) continue;
      metrics.losses.push_back({m, n, s.retained, received[m][n], s.retained - received[m][n]});
    }
  }
  if (round_ % config_.eval_every == 0 || round_ == config_.rounds) evaluate(metrics);
  return metrics;
}

void Simulation::evaluate(RoundMetrics& metrics) const {
  metrics.evaluated = true;
  double lo = 1e300;
  double hi = -1e300;
  for (auto& c : metrics.clients) {
    c.loss = task_->test_loss(aggregated_[c.client]);
    c.accuracy = task_->accuracy(aggregated_[c.client]);
    metrics.mean_loss += c.loss;
    metrics.mean_accuracy += c.accuracy;
    lo = std::min(lo, c.accuracy);
    hi = std::max(hi, c.accuracy);
  }
  metrics.mean_loss /= static_cast<double>(metrics.clients.size());
  metrics.mean_accuracy /= static_cast<double>(metrics.clients.size());
  metrics.accuracy_spread = hi - lo;
}

ExperimentResult Simulation::run() {
  ExperimentResult out;
  out.config = config_;
  out.topology = topology_;
  out.tree_costs = costs_;
  out.r_star = r_star_;
  out.weights = weights_;
  out.model_size = task_->model_size();
  out.learning_rate = config_.task.learning_rate;
  const bool ridge = task_->kind() == TaskKind::ridge_regression;
  if (ridge) {
    const auto& r = static_cast<const RidgeTask&>(*task_);
    out.smoothness = r.smoothness();
    out.strong_convexity = r.strong_convexity();
    double d = 0.0;
    for (std::size_t k = 0; k < global_.size(); ++k) d += (global_[k] - r.optimum()[k]) * (global_[k] - r.optimum()[k]);
    out.dist2.push_back(d);
    out.bias.push_back(bias_norm_sum(aggregated_, global_));
  }
  for (int a = 0; a < config_.rounds; ++a) {
    out.rounds.push_back(step());
    if (ridge) {
      out.dist2.push_back(out.rounds.back().global_dist2);
      out.bias.push_back(out.rounds.back().bias_norm_sum);
    }
  }
  return out;
}

ExperimentResult run_experiment(const SimulationConfig& config) { return Simulation(config).run(); }

}  // namespace dfl
