#include "dfl/expcli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <future>
#include <iterator>
#include <ostream>
#include <set>
#include <sstream>

#include "dfl/analysis.hpp"
#include "dfl/detail/format.hpp"

namespace dfl {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Strict view over one JSON object: every key must be consumed.
class Block {
 public:
  Block(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  void get(const char* key, int& out) {
    const json* v = fetch(key);
    if (!v) return;
    if (!v->is_number_integer()) fail(key, "expected an integer");
    out = v->get<int>();
  }
  void get(const char* key, std::uint64_t& out) {
    const json* v = fetch(key);
    if (!v) return;
    if (!v->is_number_integer() || v->get<long long>() < 0) fail(key, "expected a non-negative integer");
    out = v->get<std::uint64_t>();
  }
  void get(const char* key, double& out) {
    const json* v = fetch(key);
    if (!v) return;
    if (!v->is_number()) fail(key, "expected a number");
    out = v->get<double>();
  }
  void get(const char* key, bool& out) {
    const json* v = fetch(key);
    if (!v) return;
    if (!v->is_boolean()) fail(key, "expected true or false");
    out = v->get<bool>();
  }
  void get(const char* key, std::string& out) {
    const json* v = fetch(key);
    if (!v) return;
    if (!v->is_string()) fail(key, "expected a string");
    out = v->get<std::string>();
  }
  template <typename T>
  void get(const char* key, std::vector<T>& out) {
    const json* v = fetch(key);
    if (!v) return;
    if (!v->is_array()) fail(key, "expected an array");
    std::vector<T> values;
    for (const json& e : *v) {
      if constexpr (std::is_floating_point_v<T>) {
        if (!e.is_number()) fail(key, "expected numbers");
      } else {
        if (!e.is_number_integer()) fail(key, "expected integers");
      }
      values.push_back(e.get<T>());
    }
    out = std::move(values);
  }

  std::optional<Block> child(const char* key) {
    const json* v = fetch(key);
    if (!v) return std::nullopt;
    return Block(*v, path_ + "." + key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key: " + path_ + "." + it.key());
    }
  }

 private:
  const json* fetch(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  [[noreturn]] void fail(const char* key, const char* what) const {
    throw ConfigError(path_ + "." + key + ": " + what);
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string theta_units_name(ThetaUnits u) { return u == ThetaUnits::relative ? "relative" : "absolute"; }
std::string priority_measure_name(PriorityMeasure p) { return p == PriorityMeasure::children ? "children" : "tree_degree"; }
std::string param_priority_name(ParamPriority p) {
  return p == ParamPriority::layer_ascending ? "layer_ascending" : "layer_descending";
}

std::string bottleneck_mode(const BottleneckConfig& b) {
  if (b.cam && b.fpsr) return "cam+fpsr";
  if (b.cam) return "cam";
  if (b.fpsr) return "fpsr";
  return "none";
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::string seed_name(const char* stem, std::uint64_t seed, const char* ext) {
  return std::string(stem) + "_seed" + std::to_string(seed) + ext;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

json stats_of(const std::vector<double>& v) {
  if (v.empty()) return {{"min", nullptr}, {"mean", nullptr}, {"max", nullptr}};
  return {{"min", *std::min_element(v.begin(), v.end())},
          {"mean", mean_of(v)},
          {"max", *std::max_element(v.begin(), v.end())}};
}

}  // namespace

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.sim.clients = 20;
  c.sim.density = 0.6;
  c.sim.area_km = 1.0;
  c.sim.routing.theta = 0.1;
  c.sim.routing.iterations = 3;
  c.sim.routing.theta_units = ThetaUnits::relative;
  c.sim.budget.slot_s = c.sim.budget.t_max_s;
  // Each of the 672 MLP weights stands for 17396 on-air parameters, so the
  // broadcast payload matches an 11.69M-parameter network.
  c.sim.budget.param_scale = 17396;
  c.sim.task.dirichlet_alpha = 0.5;
  c.sim.rounds = 200;
  c.sim.eval_every = 10;
  return c;
}

ExperimentConfig parse_config(const json& doc) {
  ExperimentConfig c = default_config();
  SimulationConfig& s = c.sim;
  Block root(doc, "config");
  std::string schema = kConfigSchema;
  root.get("schema", schema);
  if (schema != kConfigSchema) throw ConfigError("config.schema: expected " + std::string(kConfigSchema));

  if (auto b = root.child("topology")) {
    b->get("n", s.clients);
    b->get("density", s.density);
    b->get("area_km", s.area_km);
    b->get("seed", c.topology_seed);
    b->finish();
  }
  if (auto b = root.child("radio")) {
    b->get("carrier_freq_hz", s.radio.carrier_freq_hz);
    b->get("bandwidth_hz", s.radio.bandwidth_hz);
    b->get("tx_power_dbm", s.radio.tx_power_dbm);
    b->get("noise_psd_dbm_per_hz", s.radio.noise_psd_dbm_per_hz);
    b->get("propagation_const", s.radio.propagation_const);
    b->finish();
  }
  if (auto b = root.child("budget")) {
    b->get("t_max_s", s.budget.t_max_s);
    b->get("frames", s.budget.frames);
    s.budget.slot_s = s.budget.frames > 0 ? s.budget.t_max_s / s.budget.frames : s.budget.t_max_s;
    b->get("slot_s", s.budget.slot_s);
    b->get("bits_per_param", s.budget.bits_per_param);
    b->get("param_scale", s.budget.param_scale);
    b->finish();
  } else {
    s.budget.slot_s = s.budget.t_max_s / s.budget.frames;
  }
  if (auto b = root.child("routing")) {
    std::string scheme(scheme_name(s.scheme));
    std::string units = theta_units_name(s.routing.theta_units);
    std::string priority = priority_measure_name(s.routing.priority);
    b->get("scheme", scheme);
    b->get("theta", s.routing.theta);
    b->get("iterations", s.routing.iterations);
    b->get("theta_units", units);
    b->get("priority", priority);
    b->finish();
    try {
      s.scheme = parse_scheme(scheme);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config.routing.scheme: ") + e.what());
    }
    if (units == "relative") {
      s.routing.theta_units = ThetaUnits::relative;
    } else if (units == "absolute") {
      s.routing.theta_units = ThetaUnits::absolute;
    } else {
      throw ConfigError("config.routing.theta_units: expected relative or absolute");
    }
    if (priority == "children") {
      s.routing.priority = PriorityMeasure::children;
    } else if (priority == "tree_degree") {
      s.routing.priority = PriorityMeasure::tree_degree;
    } else {
      throw ConfigError("config.routing.priority: expected children or tree_degree");
    }
  }
  if (auto b = root.child("pruning")) {
    std::string policy(policy_name(s.pruning.policy));
    b->get("policy", policy);
    b->get("fixed_r", s.pruning.fixed_r);
    b->finish();
    try {
      s.pruning.policy = parse_policy(policy);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config.pruning.policy: ") + e.what());
    }
  }
  if (auto b = root.child("task")) {
    TaskConfig& t = s.task;
    std::string kind(task_kind_name(t.kind));
    b->get("kind", kind);
    b->get("samples_per_client", t.samples_per_client);
    b->get("size_jitter", t.size_jitter);
    b->get("test_samples", t.test_samples);
    b->get("features", t.features);
    b->get("hidden", t.hidden);
    b->get("classes", t.classes);
    b->get("class_separation", t.class_separation);
    b->get("dirichlet_alpha", t.dirichlet_alpha);
    b->get("ridge_channels", t.ridge_channels);
    b->get("noise", t.noise);
    b->get("batch_size", t.batch_size);
    b->get("learning_rate", t.learning_rate);
    b->get("auto_learning_rate", t.auto_learning_rate);
    b->get("local_epochs", t.local_epochs);
    b->get("regularizer", t.regularizer);
    b->finish();
    try {
      t.kind = parse_task_kind(kind);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config.task.kind: ") + e.what());
    }
  }
  root.get("rounds", s.rounds);
  root.get("eval_every", s.eval_every);
  root.get("seeds", c.seeds);
  if (c.seeds.empty()) throw ConfigError("config.seeds: need at least one seed");
  if (auto b = root.child("analysis")) {
    b->get("tau_rho", c.tau_rho);
    b->finish();
  }
  if (auto b = root.child("sweep")) {
    b->get("theta_grid", c.theta_grid);
    b->get("psi_max", c.psi_max);
    b->get("bandwidth_grid_hz", c.bandwidth_grid_hz);
    b->get("t_max_grid_s", c.t_max_grid_s);
    b->finish();
    if (c.psi_max < 0) throw ConfigError("config.sweep.psi_max: must be >= 0");
  }
  if (auto b = root.child("bottleneck")) {
    BottleneckConfig bn;
    std::string mode = "none";
    std::string priority = param_priority_name(bn.priority);
    b->get("bw_limited", bn.bw_limited);
    b->get("bw_cap", bn.bw_cap);
    b->get("fwd_limited", bn.fwd_limited);
    b->get("fwd_budget", bn.fwd_budget);
    b->get("mode", mode);
    b->get("priority", priority);
    b->finish();
    if (mode == "none") {
    } else if (mode == "cam") {
      bn.cam = true;
    } else if (mode == "fpsr") {
      bn.fpsr = true;
    } else if (mode == "cam+fpsr") {
      bn.cam = bn.fpsr = true;
    } else {
      throw ConfigError("config.bottleneck.mode: expected none, cam, fpsr or cam+fpsr");
    }
    if (priority == "layer_ascending") {
      bn.priority = ParamPriority::layer_ascending;
    } else if (priority == "layer_descending") {
      bn.priority = ParamPriority::layer_descending;
    } else {
      throw ConfigError("config.bottleneck.priority: expected layer_ascending or layer_descending");
    }
    s.bottleneck = bn;
  }
  root.finish();

  s.seed = c.seeds.front();
  try {
    s.validate();
    for (double t : c.tau_rho) {
      if (!(t > 0.0)) throw std::invalid_argument("analysis.tau_rho values must be > 0");
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

ExperimentConfig parse_config_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(doc);
}

ExperimentConfig load_config(const fs::path& path) { return parse_config_text(read_file(path)); }

json config_to_json(const ExperimentConfig& c) {
  const SimulationConfig& s = c.sim;
  const TaskConfig& t = s.task;
  json j;
  j["schema"] = kConfigSchema;
  j["topology"] = {{"n", s.clients}, {"density", s.density}, {"area_km", s.area_km}, {"seed", c.topology_seed}};
  j["radio"] = {{"carrier_freq_hz", s.radio.carrier_freq_hz},
                {"bandwidth_hz", s.radio.bandwidth_hz},
                {"tx_power_dbm", s.radio.tx_power_dbm},
                {"noise_psd_dbm_per_hz", s.radio.noise_psd_dbm_per_hz},
                {"propagation_const", s.radio.propagation_const}};
  j["budget"] = {{"t_max_s", s.budget.t_max_s},
                 {"slot_s", s.budget.slot_s},
                 {"frames", s.budget.frames},
                 {"bits_per_param", s.budget.bits_per_param},
                 {"param_scale", s.budget.param_scale}};
  j["routing"] = {{"scheme", std::string(scheme_name(s.scheme))},
                  {"theta", s.routing.theta},
                  {"iterations", s.routing.iterations},
                  {"theta_units", theta_units_name(s.routing.theta_units)},
                  {"priority", priority_measure_name(s.routing.priority)}};
  j["pruning"] = {{"policy", std::string(policy_name(s.pruning.policy))}, {"fixed_r", s.pruning.fixed_r}};
  j["task"] = {{"kind", std::string(task_kind_name(t.kind))},
               {"samples_per_client", t.samples_per_client},
               {"size_jitter", t.size_jitter},
               {"test_samples", t.test_samples},
               {"features", t.features},
               {"hidden", t.hidden},
               {"classes", t.classes},
               {"class_separation", t.class_separation},
               {"dirichlet_alpha", t.dirichlet_alpha},
               {"ridge_channels", t.ridge_channels},
               {"noise", t.noise},
               {"batch_size", t.batch_size},
               {"learning_rate", t.learning_rate},
               {"auto_learning_rate", t.auto_learning_rate},
               {"local_epochs", t.local_epochs},
               {"regularizer", t.regularizer}};
  j["rounds"] = s.rounds;
  j["eval_every"] = s.eval_every;
  j["seeds"] = c.seeds;
  j["analysis"] = {{"tau_rho", c.tau_rho}};
  j["sweep"] = {{"theta_grid", c.theta_grid},
                {"psi_max", c.psi_max},
                {"bandwidth_grid_hz", c.bandwidth_grid_hz},
                {"t_max_grid_s", c.t_max_grid_s}};
  if (s.bottleneck) {
    const BottleneckConfig& b = *s.bottleneck;
    j["bottleneck"] = {{"bw_limited", b.bw_limited},
                       {"bw_cap", b.bw_cap},
                       {"fwd_limited", b.fwd_limited},
                       {"fwd_budget", b.fwd_budget},
                       {"mode", bottleneck_mode(b)},
                       {"priority", param_priority_name(b.priority)}};
  }
  return j;
}

void apply_overrides(ExperimentConfig& c, const CliOverrides& o) {
  try {
    if (o.seed) {
      c.seeds = {*o.seed};
      c.topology_seed = *o.seed;
    }
    if (o.scheme) c.sim.scheme = parse_scheme(*o.scheme);
    if (o.policy) c.sim.pruning.policy = parse_policy(*o.policy);
    c.sim.seed = c.seeds.front();
    c.sim.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

fs::path resolve_out_dir(const std::optional<std::string>& flag, const fs::path& fallback) {
  if (flag) return *flag;
  if (const char* env = std::getenv("DFL_OUT_DIR"); env && *env) return env;
  return fallback;
}

// ---------------------------------------------------------------------------
// gen-topology

void cmd_gen_topology(const ExperimentConfig& c, const fs::path& out_dir, std::ostream& log) {
  const SimulationConfig& s = c.sim;
  const Topology topo = generate_rgg(s.clients, s.density, s.area_km, c.topology_seed, s.radio);
  write_file(out_dir / "topology.json", topology_to_json(topo) + "\n");
  log << "nodes " << topo.node_count() << ", edges " << topo.edges().size() << ", repaired "
      << (topo.repaired() ? "yes" : "no") << "\n";
}

// ---------------------------------------------------------------------------
// route

namespace {

struct RouteEntry {
  double cost = 0.0;
  double r_star = 1.0;
  bool feasible = true;
  std::uint64_t payload_bits = 0;
  double latency = 0.0;
};

RouteEntry evaluate_tree(const BroadcastTree& tree, const Topology& topo, const ModelSpec& spec,
                         const BudgetConfig& budget, double t_max) {
  RouteEntry e;
  e.cost = tree_cost(tree, topo);
  const std::uint64_t k_params = static_cast<std::uint64_t>(spec.total_params()) * budget.param_scale;
  const RetentionDecision d = optimal_retention(e.cost, k_params, budget.bits_per_param, t_max);
  e.r_star = d.r;
  e.feasible = d.feasible;
  std::size_t retained = 0;
  if (d.feasible) {
    try {
      retained = build_plan(spec, eta_from_retention(d.r)).retained_count;
    } catch (const LayerFullyPruned&) {
      retained = 0;
    }
  }
  e.payload_bits = static_cast<std::uint64_t>(retained) * budget.param_scale * budget.bits_per_param;
  e.latency = total_latency(tree, topo, e.payload_bits);
  return e;
}

json entry_json(const RouteEntry& e) {
  return {{"cost", e.cost},
          {"r_star", e.r_star},
          {"feasible", e.feasible},
          {"payload_bits", e.payload_bits},
          {"t_m", e.latency}};
}

}  // namespace

void cmd_route(const ExperimentConfig& c, const std::optional<fs::path>& topology_file, const fs::path& out_dir,
               bool sweep, std::ostream& log) {
  const SimulationConfig& s = c.sim;
  Topology topo;
  if (topology_file) {
    try {
      topo = topology_from_json_text(read_file(*topology_file));
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError("bad topology file " + topology_file->string() + ": " + e.what());
    }
  } else {
    topo = generate_rgg(s.clients, s.density, s.area_km, c.topology_seed, s.radio);
  }
  const ModelSpec spec = task_model_spec(s.task);
  const int n = topo.node_count();
  const bool clt = s.scheme != Scheme::kruskal && s.scheme != Scheme::bellman && s.scheme != Scheme::flood;

  json roots = json::array();
  json trees = json::array();
  std::string latency = "# schema: dfl-latency/1\nclient,C_m,r_star,t_m,feasible\n";
  if (n >= 2) {
    for (NodeId m = 0; m < n; ++m) {
      json schemes = json::object();
      for (Scheme sc : all_schemes()) {
        const BroadcastTree tree = build_tree(topo, m, sc, s.routing);
        schemes[std::string(scheme_name(sc))] = entry_json(evaluate_tree(tree, topo, spec, s.budget, s.budget.t_max_s));
      }
      json row = {{"root", m}, {"schemes", schemes}};
      if (clt) row["stage_costs"] = p_clt(topo, m, variant_config(s.scheme, s.routing)).stage_costs;
      roots.push_back(row);

      const BroadcastTree tree = build_tree(topo, m, s.scheme, s.routing);
      trees.push_back(tree_to_json(tree, topo));
      const RouteEntry e = evaluate_tree(tree, topo, spec, s.budget, s.budget.t_max_s);
      latency += std::to_string(m) + "," + detail::fmt17(e.cost) + "," + detail::fmt17(e.r_star) + "," +
                 detail::fmt17(e.latency) + "," + (e.feasible ? "1" : "0") + "\n";
    }
  }
  const json echo = config_to_json(c);
  write_file(out_dir / "route_report.json", dump({{"schema", "dfl-route/1"},
                                                  {"config", echo},
                                                  {"scheme", std::string(scheme_name(s.scheme))},
                                                  {"model_size", spec.total_params()},
                                                  {"nodes", n},
                                                  {"roots", roots}}));
  write_file(out_dir / "trees.json",
             dump({{"schema", "dfl-trees/1"}, {"scheme", std::string(scheme_name(s.scheme))}, {"trees", trees}}));
  write_file(out_dir / "latency.csv", latency);
  if (n >= 2) write_file(out_dir / "schedule.json", dump(schedule_to_json(tdma_schedule(topo, s.budget.frames, s.budget.slot_s), topo)));

  if (sweep && n >= 2) {
    const std::uint64_t k_bits =
        static_cast<std::uint64_t>(spec.total_params()) * s.budget.param_scale * s.budget.bits_per_param;
    const Scheme swept = clt ? s.scheme : Scheme::p_clt;
    json theta_rows = json::array();
    for (double theta : c.theta_grid) {
      RoutingConfig r = s.routing;
      r.theta = theta;
      std::vector<double> costs;
      std::vector<double> full_times;
      for (NodeId m = 0; m < n; ++m) {
        costs.push_back(tree_cost(build_tree(topo, m, swept, r), topo));
        full_times.push_back(static_cast<double>(k_bits) * costs.back());
      }
      theta_rows.push_back({{"theta", theta}, {"mean_cost", mean_of(costs)}, {"mean_full_model_time_s", mean_of(full_times)}});
    }
    json psi_rows = json::array();
    {
      RoutingConfig r = variant_config(swept, s.routing);
      r.iterations = c.psi_max;
      std::vector<std::vector<double>> per_root;
      for (NodeId m = 0; m < n; ++m) {
        const auto stages = p_clt(topo, m, r).stage_costs;
        // Entries after the MST init and theta stage are the max stages.
        const std::size_t first = r.use_condition_theta ? 1 : 0;
        std::vector<double> seq;
        for (std::size_t i = first; i < stages.size(); ++i) seq.push_back(stages[i]);
        while (static_cast<int>(seq.size()) < c.psi_max + 1) seq.push_back(seq.back());
        per_root.push_back(seq);
      }
      for (int psi = 0; psi <= c.psi_max; ++psi) {
        std::vector<double> costs;
        for (const auto& seq : per_root) costs.push_back(seq[psi]);
        psi_rows.push_back({{"psi", psi}, {"mean_cost", mean_of(costs)}});
      }
      psi_rows = {{"means", psi_rows}, {"per_root", per_root}};
    }
    json bw_rows = json::array();
    for (double bw : c.bandwidth_grid_hz) {
      RadioParams radio = s.radio;
      radio.bandwidth_hz = bw;
      const Topology t2 = with_radio(topo, radio);
      std::vector<double> r;
      std::vector<double> costs;
      for (NodeId m = 0; m < n; ++m) {
        const RouteEntry e = evaluate_tree(build_tree(t2, m, s.scheme, s.routing), t2, spec, s.budget, s.budget.t_max_s);
        r.push_back(e.r_star);
        costs.push_back(e.cost);
      }
      bw_rows.push_back({{"bandwidth_hz", bw}, {"mean_r_star", mean_of(r)}, {"mean_cost", mean_of(costs)}});
    }
    json tmax_rows = json::array();
    for (double tm : c.t_max_grid_s) {
      std::vector<double> r;
      std::vector<double> costs;
      for (NodeId m = 0; m < n; ++m) {
        const RouteEntry e = evaluate_tree(build_tree(topo, m, s.scheme, s.routing), topo, spec, s.budget, tm);
        r.push_back(e.r_star);
        costs.push_back(e.cost);
      }
      tmax_rows.push_back({{"t_max_s", tm}, {"mean_r_star", mean_of(r)}, {"mean_cost", mean_of(costs)}});
    }
    write_file(out_dir / "route_sweep.json", dump({{"schema", "dfl-route-sweep/1"},
                                                   {"config", echo},
                                                   {"scheme", std::string(scheme_name(swept))},
                                                   {"theta", theta_rows},
                                                   {"psi", psi_rows},
                                                   {"bandwidth", bw_rows},
                                                   {"t_max", tmax_rows}}));
  }
  log << "routed " << n << " roots with " << scheme_name(s.scheme) << (sweep ? " (with sweep)" : "") << "\n";
}

// ---------------------------------------------------------------------------
// simulate

std::string metrics_csv(const ExperimentResult& r) {
  std::ostringstream out;
  out << "# schema: dfl-metrics/1\n";
  out << "round,scheme,policy,client,C_m,r_m,payload_bits,t_m,delivered,loss,acc\n";
  const std::string scheme(scheme_name(r.config.scheme));
  const std::string policy(policy_name(r.config.pruning.policy));
  for (const RoundMetrics& m : r.rounds) {
    for (const ClientRound& c : m.clients) {
      out << m.round << ',' << scheme << ',' << policy << ',' << c.client << ',' << detail::fmt17(c.cost) << ','
          << detail::fmt17(c.retention) << ',' << c.payload_bits << ',' << detail::fmt17(c.latency_s) << ','
          << (c.delivered ? 1 : 0) << ',';
      if (m.evaluated) out << detail::fmt17(c.loss) << ',' << detail::fmt17(c.accuracy);
      else out << ',';
      out << '\n';
    }
  }
  return out.str();
}

std::string rounds_csv(const ExperimentResult& r) {
  std::ostringstream out;
  out << "# schema: dfl-rounds/1\n";
  out << "round,evaluated,mean_loss,mean_acc,acc_spread,bias_norm_sum,jain,max_norm_error,coeff_max_lhs,"
         "coeff_max_rhs,coeff_violations,global_dist2\n";
  for (const RoundMetrics& m : r.rounds) {
    out << m.round << ',' << (m.evaluated ? 1 : 0) << ',';
    if (m.evaluated) {
      out << detail::fmt17(m.mean_loss) << ',' << detail::fmt17(m.mean_accuracy) << ','
          << detail::fmt17(m.accuracy_spread);
    } else {
      out << ",,";
    }
    out << ',' << detail::fmt17(m.bias_norm_sum) << ',' << detail::fmt17(m.jain) << ','
        << detail::fmt17(m.max_normalization_error) << ',' << detail::fmt17(m.coeff_max_lhs) << ','
        << detail::fmt17(m.coeff_max_rhs) << ',' << m.coeff_violations << ',' << detail::fmt17(m.global_dist2)
        << '\n';
  }
  return out.str();
}

std::string loss_ledger_csv(const ExperimentResult& r) {
  std::ostringstream out;
  out << "# schema: dfl-loss-ledger/1\n";
  out << "round,sender,receiver,retained,delivered,lost\n";
  for (const RoundMetrics& m : r.rounds) {
    for (const LossEntry& e : m.losses) {
      out << m.round << ',' << e.sender << ',' << e.receiver << ',' << e.retained << ',' << e.delivered << ','
          << e.lost << '\n';
    }
  }
  return out.str();
}

json trace_json(const ExperimentResult& r, const ExperimentConfig& c) {
  ExperimentConfig one = c;
  one.seeds = {r.config.seed};
  json rounds = {{"round", json::array()},
                 {"bias_norm_sum", json::array()},
                 {"jain", json::array()},
                 {"max_normalization_error", json::array()},
                 {"coeff_max_lhs", json::array()},
                 {"coeff_max_rhs", json::array()},
                 {"coeff_violations", json::array()}};
  json evals = json::array();
  for (const RoundMetrics& m : r.rounds) {
    rounds["round"].push_back(m.round);
    rounds["bias_norm_sum"].push_back(m.bias_norm_sum);
    rounds["jain"].push_back(m.jain);
    rounds["max_normalization_error"].push_back(m.max_normalization_error);
    rounds["coeff_max_lhs"].push_back(m.coeff_max_lhs);
    rounds["coeff_max_rhs"].push_back(m.coeff_max_rhs);
    rounds["coeff_violations"].push_back(m.coeff_violations);
    if (m.evaluated) {
      evals.push_back({{"round", m.round},
                       {"mean_loss", m.mean_loss},
                       {"mean_accuracy", m.mean_accuracy},
                       {"accuracy_spread", m.accuracy_spread}});
    }
  }
  json j = {{"schema", "dfl-trace/1"},
            {"config", config_to_json(one)},
            {"seed", r.config.seed},
            {"task", std::string(task_kind_name(r.config.task.kind))},
            {"model_size", r.model_size},
            {"learning_rate", r.learning_rate},
            {"weights", r.weights.p},
            {"edges", r.topology.edges().size()},
            {"repaired", r.topology.repaired()},
            {"tree_costs", r.tree_costs},
            {"r_star", r.r_star},
            {"rounds", rounds},
            {"evaluations", evals}};
  if (r.config.task.kind == TaskKind::ridge_regression) {
    j["ridge"] = {{"smoothness", r.smoothness},
                  {"strong_convexity", r.strong_convexity},
                  {"dist2", r.dist2},
                  {"bias", r.bias}};
  }
  return j;
}

namespace {

json run_summary(const ExperimentResult& r) {
  json row = {{"seed", r.config.seed},
              {"edges", r.topology.edges().size()},
              {"repaired", r.topology.repaired()},
              {"mean_r_star", mean_of(r.r_star)},
              {"mean_tree_cost", mean_of(r.tree_costs)}};
  int on_time = 0;
  int violations = 0;
  double norm_err = 0.0;
  std::vector<double> jain;
  for (const RoundMetrics& m : r.rounds) {
    violations += m.coeff_violations;
    norm_err = std::max(norm_err, m.max_normalization_error);
    jain.push_back(m.jain);
  }
  if (!r.rounds.empty()) {
    for (const ClientRound& cr : r.rounds.back().clients) on_time += cr.delivered ? 1 : 0;
    const RoundMetrics& last = r.rounds.back();
    row["final_round"] = last.round;
    row["final_mean_accuracy"] = last.mean_accuracy;
    row["final_mean_loss"] = last.mean_loss;
    row["final_accuracy_spread"] = last.accuracy_spread;
    row["final_bias_norm_sum"] = last.bias_norm_sum;
  } else {
    row["final_round"] = 0;
    row["final_mean_accuracy"] = nullptr;
    row["final_mean_loss"] = nullptr;
    row["final_accuracy_spread"] = nullptr;
    row["final_bias_norm_sum"] = nullptr;
  }
  row["on_time_clients"] = on_time;
  row["mean_jain"] = mean_of(jain);
  row["coeff_violations"] = violations;
  row["max_normalization_error"] = norm_err;
  return row;
}

}  // namespace

void cmd_simulate(const ExperimentConfig& c, const fs::path& out_dir, std::ostream& log) {
  fs::create_directories(out_dir);
  std::vector<std::future<json>> jobs;
  for (std::uint64_t seed : c.seeds) {
    jobs.push_back(std::async(std::launch::async, [&c, &out_dir, seed] {
      SimulationConfig sc = c.sim;
      sc.seed = seed;
      const ExperimentResult r = run_experiment(sc);
      write_file(out_dir / seed_name("metrics", seed, ".csv"), metrics_csv(r));
      write_file(out_dir / seed_name("rounds", seed, ".csv"), rounds_csv(r));
      write_file(out_dir / seed_name("trace", seed, ".json"), dump(trace_json(r, c)));
      if (sc.bottleneck) write_file(out_dir / seed_name("loss_ledger", seed, ".csv"), loss_ledger_csv(r));
      return run_summary(r);
    }));
  }
  json runs = json::array();
  std::vector<double> finals;
  for (auto& job : jobs) {
    json row = job.get();
    if (!row["final_mean_accuracy"].is_null()) finals.push_back(row["final_mean_accuracy"].get<double>());
    runs.push_back(std::move(row));
  }
  json summary = {{"schema", "dfl-summary/1"}, {"config", config_to_json(c)}, {"runs", runs}};
  summary["mean_final_accuracy"] = finals.empty() ? json(nullptr) : json(mean_of(finals));
  write_file(out_dir / "summary.json", dump(summary));
  log << "simulated " << c.seeds.size() << " seed(s), " << c.sim.rounds << " rounds, "
      << scheme_name(c.sim.scheme) << "/" << policy_name(c.sim.pruning.policy) << "\n";
}

// ---------------------------------------------------------------------------
// analyze

json analyze_trace(const json& trace, const ExperimentConfig& c) {
  json out = {{"seed", trace.at("seed")}};
  const json& rounds = trace.at("rounds");
  const auto lhs = rounds.at("coeff_max_lhs").get<std::vector<double>>();
  const auto rhs = rounds.at("coeff_max_rhs").get<std::vector<double>>();
  const auto viol = rounds.at("coeff_violations").get<std::vector<int>>();
  int total = 0;
  for (int v : viol) total += v;
  out["coeff_bound"] = {{"rounds", lhs.size()},
                   {"violations", total},
                   {"max_lhs", lhs.empty() ? 0.0 : *std::max_element(lhs.begin(), lhs.end())},
                   {"max_rhs", rhs.empty() ? 0.0 : *std::max_element(rhs.begin(), rhs.end())},
                   {"lhs_all_zero", std::all_of(lhs.begin(), lhs.end(), [](double x) { return x == 0.0; })},
                   {"lhs", lhs},
                   {"rhs", rhs}};

  const TaskConfig& t = c.sim.task;
  if (trace.contains("ridge")) {
    const json& ridge = trace.at("ridge");
    const auto weights = trace.at("weights").get<std::vector<double>>();
    const ClientWeights w{weights};
    const bool single_full_step = t.local_epochs == 1 && t.batch_size == 0;
    json one_round = json::array();
    for (double tau : c.tau_rho) {
      const BoundParams params = BoundParams::from_weights(ridge.at("smoothness").get<double>(),
                                                           ridge.at("strong_convexity").get<double>(),
                                                           trace.at("learning_rate").get<double>(), tau, w);
      const OneRoundReport rep = one_round_check(ridge.at("dist2").get<std::vector<double>>(),
                                            ridge.at("bias").get<std::vector<double>>(), params);
      json rows = json::array();
      int holds = 0;
      for (const OneRoundRow& row : rep.rows) {
        holds += row.holds ? 1 : 0;
        rows.push_back({{"round", row.round}, {"lhs", row.lhs}, {"rhs", row.rhs}, {"holds", row.holds}});
      }
      one_round.push_back({{"tau_rho", tau},
                        {"rounds", rep.rows.size()},
                        {"holds_count", holds},
                        {"violations", rep.violations},
                        {"rows", rows}});
    }
    out["one_round_bound"] = {{"applicable", single_full_step},
                     {"note", single_full_step ? "one full-batch gradient step per round"
                                               : "bound assumes one full-batch step per round; reported only"},
                     {"eta_over_mu_by_L2", trace.at("learning_rate").get<double>() *
                                               std::pow(ridge.at("smoothness").get<double>(), 2) /
                                               ridge.at("strong_convexity").get<double>()},
                     {"checks", one_round}};
  }
  const auto jain = rounds.at("jain").get<std::vector<double>>();
  out["fairness"] = {{"mean_jain", mean_of(jain)}, {"final_jain", jain.empty() ? 0.0 : jain.back()}};
  const auto r_star = trace.at("r_star").get<std::vector<double>>();
  const auto costs = trace.at("tree_costs").get<std::vector<double>>();
  out["retention"] = stats_of(r_star);
  out["retention"]["values"] = r_star;
  out["tree_cost"] = stats_of(costs);
  out["tree_cost"]["values"] = costs;
  const json& evals = trace.at("evaluations");
  out["final"] = evals.empty() ? json(nullptr) : evals.back();
  return out;
}

void cmd_analyze(const fs::path& run_dir, const fs::path& out_dir, std::ostream& log) {
  const fs::path summary_path = run_dir / "summary.json";
  if (!fs::exists(summary_path)) throw ConfigError("missing run artifact: " + summary_path.string());
  json summary;
  try {
    summary = json::parse(read_file(summary_path));
  } catch (const json::exception& e) {
    throw ConfigError("unreadable summary: " + std::string(e.what()));
  }
  const ExperimentConfig c = parse_config(summary.at("config"));
  json runs = json::array();
  for (std::uint64_t seed : c.seeds) {
    const fs::path p = run_dir / seed_name("trace", seed, ".json");
    if (!fs::exists(p)) throw ConfigError("missing run artifact: " + p.string());
    runs.push_back(analyze_trace(json::parse(read_file(p)), c));
  }
  write_file(out_dir / "analysis_report.json",
             dump({{"schema", "dfl-analysis/1"}, {"config", config_to_json(c)}, {"runs", runs}}));
  log << "analyzed " << runs.size() << " run(s)\n";
}

}  // namespace dfl
