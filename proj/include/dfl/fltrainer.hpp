#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dfl/aggregator.hpp"
#include "dfl/enhanced.hpp"
#include "dfl/linkschedule.hpp"
#include "dfl/netgen.hpp"
#include "dfl/pruner.hpp"
#include "dfl/routing.hpp"

namespace dfl {

enum class TaskKind { ridge_regression, softmax_mlp };

std::string_view task_kind_name(TaskKind k);
TaskKind parse_task_kind(std::string_view name);

struct TaskConfig {
  TaskKind kind = TaskKind::softmax_mlp;
  int samples_per_client = 60;
  // Client sizes drawn uniformly from samples_per_client * [1 - j, 1 + j].
  double size_jitter = 0.0;
  int test_samples = 400;
  // softmax_mlp: input features (a constant bias feature is prepended), hidden
  // width and class count form the channel list [features + 1, hidden, classes].
  int features = 16;
  int hidden = 32;
  int classes = 4;
  double class_separation = 1.0;
  // Label-skew concentration; 0 means IID.
  double dirichlet_alpha = 0.0;
  // ridge_regression: channel list whose total weight count is the dimension.
  std::vector<int> ridge_channels{4, 4};
  double noise = 1.0;
  int batch_size = 0;  // 0: full batch
  double learning_rate = 0.1;
  // Ridge only: use mu / L^2 as the learning rate.
  bool auto_learning_rate = false;
  int local_epochs = 1;
  double regularizer = 1e-3;

  void validate() const;
};

// Per-client objectives F_n over flat parameter vectors laid out by spec().
class Task {
 public:
  virtual ~Task() = default;

  virtual TaskKind kind() const = 0;
  const ModelSpec& spec() const { return spec_; }
  std::size_t model_size() const { return spec_.total_params(); }
  int client_count() const { return static_cast<int>(sizes_.size()); }
  std::size_t client_size(int n) const { return sizes_.at(n); }
  const std::vector<std::size_t>& client_sizes() const { return sizes_; }
  double regularizer() const { return reg_; }

  virtual std::vector<double> initial_model(std::uint64_t seed) const = 0;
  // F_n(w) over the full local dataset, regularizer included.
  virtual double loss(int n, std::span<const double> w) const = 0;
  // Mean per-sample gradient over `batch` plus the regularizer gradient.
  virtual void gradient(int n, std::span<const double> w, std::span<const std::size_t> batch,
                        std::span<double> grad) const = 0;
  void full_gradient(int n, std::span<const double> w, std::span<double> grad) const;
  virtual double test_loss(std::span<const double> w) const = 0;
  // Classification accuracy, or R^2 for regression.
  virtual double accuracy(std::span<const double> w) const = 0;

 protected:
  ModelSpec spec_;
  std::vector<std::size_t> sizes_;
  double reg_ = 0.0;
};

class RidgeTask : public Task {
 public:
  RidgeTask(const TaskConfig& config, int clients, std::uint64_t seed);

  TaskKind kind() const override { return TaskKind::ridge_regression; }
  std::vector<double> initial_model(std::uint64_t seed) const override;
  double loss(int n, std::span<const double> w) const override;
  void gradient(int n, std::span<const double> w, std::span<const std::size_t> batch,
                std::span<double> grad) const override;
  double test_loss(std::span<const double> w) const override;
  double accuracy(std::span<const double> w) const override;

  // max_n of the largest and min_n of the smallest Hessian eigenvalue.
  double smoothness() const { return L_; }
  double strong_convexity() const { return mu_; }
  // Minimizer of sum_n p_n F_n with p_n proportional to client size.
  const std::vector<double>& optimum() const { return optimum_; }

 private:
  int dim_ = 0;
  std::vector<std::vector<double>> x_;  // per client, row-major D_n x dim
  std::vector<std::vector<double>> y_;
  std::vector<double> test_x_;
  std::vector<double> test_y_;
  double L_ = 0.0;
  double mu_ = 0.0;
  std::vector<double> optimum_;
};

class MlpTask : public Task {
 public:
  MlpTask(const TaskConfig& config, int clients, std::uint64_t seed);

  TaskKind kind() const override { return TaskKind::softmax_mlp; }
  std::vector<double> initial_model(std::uint64_t seed) const override;
  double loss(int n, std::span<const double> w) const override;
  void gradient(int n, std::span<const double> w, std::span<const std::size_t> batch,
                std::span<double> grad) const override;
  double test_loss(std::span<const double> w) const override;
  double accuracy(std::span<const double> w) const override;

  const std::vector<int>& labels(int n) const { return labels_.at(n); }

 private:
  // Cross-entropy of one sample; fills grad (scaled by `scale`) when given.
  double sample_loss(const double* x, int label, std::span<const double> w, double* grad, double scale) const;
  int predict(const double* x, std::span<const double> w) const;

  int in_ = 0;
  int hidden_ = 0;
  int classes_ = 0;
  std::vector<std::vector<double>> x_;
  std::vector<std::vector<int>> labels_;
  std::vector<double> test_x_;
  std::vector<int> test_labels_;
};

std::unique_ptr<Task> make_task(const TaskConfig& config, int clients, std::uint64_t seed);
// Layer layout a task config produces, without generating any data.
ModelSpec task_model_spec(const TaskConfig& config);

// Runs local_epochs passes of mini-batch SGD on client n starting from model.
// Sampling is seeded by (seed, round, client).
std::vector<double> local_update(std::span<const double> model, const Task& task, const TaskConfig& config,
                                 int client, std::uint64_t seed, int round);

double jain_index(std::span<const double> values);

enum class PruningPolicy { optimal, fixed, none };

std::string_view policy_name(PruningPolicy p);
PruningPolicy parse_policy(std::string_view name);

struct PruningConfig {
  PruningPolicy policy = PruningPolicy::optimal;
  // One value for every client or one per client.
  std::vector<double> fixed_r{0.6};

  void validate(int clients) const;
  double fixed_for(int client) const;
};

struct BudgetConfig {
  double t_max_s = 2.0;
  double slot_s = 2.0;
  int frames = 1;
  std::uint64_t bits_per_param = 32;
  // Real parameters represented by one simulated weight on air.
  std::uint64_t param_scale = 1;

  void validate() const;
};

struct SimulationConfig {
  int clients = 20;
  double density = 0.6;
  double area_km = 1.0;
  RadioParams radio;
  BudgetConfig budget;
  Scheme scheme = Scheme::p_clt;
  RoutingConfig routing;
  PruningConfig pruning;
  TaskConfig task;
  std::optional<BottleneckConfig> bottleneck;
  int rounds = 100;
  int eval_every = 1;
  std::uint64_t seed = 1;

  void validate() const;
};

struct ClientRound {
  int client = 0;
  double cost = 0.0;
  double retention = 1.0;
  std::size_t retained = 0;
  std::uint64_t payload_bits = 0;
  double latency_s = 0.0;
  bool delivered = false;
  bool detour = false;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct LossEntry {
  int sender = 0;
  int receiver = 0;
  std::size_t retained = 0;
  std::size_t delivered = 0;
  std::size_t lost = 0;
};

struct RoundMetrics {
  int round = 0;
  bool evaluated = false;
  std::vector<ClientRound> clients;
  double mean_loss = 0.0;
  double mean_accuracy = 0.0;
  double accuracy_spread = 0.0;
  double bias_norm_sum = 0.0;
  double jain = 0.0;
  double max_normalization_error = 0.0;
  double coeff_max_lhs = 0.0;
  double coeff_max_rhs = 0.0;
  int coeff_violations = 0;
  double global_dist2 = 0.0;  // ridge only
  std::vector<LossEntry> losses;
};

struct ExperimentResult {
  SimulationConfig config;
  Topology topology;
  std::vector<double> tree_costs;
  std::vector<double> r_star;
  ClientWeights weights;
  std::size_t model_size = 0;
  std::vector<RoundMetrics> rounds;
  // Ridge runs: squared distance of the ideal global model to the optimum and
  // the bias sum, index 0 being the common initial model.
  std::vector<double> dist2;
  std::vector<double> bias;
  double smoothness = 0.0;
  double strong_convexity = 0.0;
  double learning_rate = 0.0;
};

// One client per node; trees, retention and delivery are static per run,
// training and aggregation evolve per round.
class Simulation {
 public:
  explicit Simulation(SimulationConfig config);

  const Topology& topology() const { return topology_; }
  const Task& task() const { return *task_; }
  const ClientWeights& weights() const { return weights_; }
  const BroadcastTree& tree(NodeId m) const { return trees_.at(m); }
  double tree_cost(NodeId m) const { return costs_.at(m); }
  double r_star(NodeId m) const { return r_star_.at(m); }
  const std::vector<std::vector<double>>& models() const { return aggregated_; }
  // Ideal global model of the latest round's trained models.
  const std::vector<double>& global_model() const { return global_; }
  double learning_rate() const { return config_.task.learning_rate; }
  int round() const { return round_; }

  RoundMetrics step();
  ExperimentResult run();

 private:
  struct SenderPlan {
    double retention = 1.0;
    std::size_t retained = 0;
    std::uint64_t payload_bits = 0;
    double latency = 0.0;
    bool on_time = false;
    bool detour = false;
    std::optional<PruningPlan> plan;
    std::vector<std::size_t> order;
  };

  void plan_senders();
  void evaluate(RoundMetrics& metrics) const;

  SimulationConfig config_;
  Topology topology_;
  std::unique_ptr<Task> task_;
  ClientWeights weights_;
  std::vector<BroadcastTree> trees_;
  std::vector<double> costs_;
  std::vector<double> r_star_;
  std::vector<SenderPlan> senders_;
  std::optional<DeliveryEngine> engine_;
  std::vector<std::vector<double>> aggregated_;
  std::vector<double> global_;
  int round_ = 0;
};

ExperimentResult run_experiment(const SimulationConfig& config);

}  // namespace dfl
