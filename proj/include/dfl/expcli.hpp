#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dfl/fltrainer.hpp"
#include "json.hpp"

namespace dfl {

inline constexpr const char* kConfigSchema = "dfl-experiment/1";

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  // Topology, radio, budget, routing, pruning, task and bottleneck blocks.
  // sim.seed is overwritten per run from `seeds`.
  SimulationConfig sim;
  std::uint64_t topology_seed = 1;
  std::vector<std::uint64_t> seeds{1};
  std::vector<double> tau_rho{0.1, 1.0, 10.0};
  // Grids used by `route --sweep`.
  std::vector<double> theta_grid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  int psi_max = 5;
  std::vector<double> bandwidth_grid_hz{23e6, 30e6, 35e6};
  std::vector<double> t_max_grid_s{1.0, 2.0, 3.0};
};

// Defaults follow the reference testbed: 20 clients, density 0.6, 30 MHz,
// 20 dBm, -174 dBm/Hz, 2.5 GHz carrier, t_max 2 s, theta 0.1, three max stages.
ExperimentConfig default_config();

// Unknown keys and malformed values raise ConfigError.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
// Complete config with every default filled in; parse_config(echo) == config.
nlohmann::json config_to_json(const ExperimentConfig& config);

struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> scheme;
  std::optional<std::string> policy;
};

void apply_overrides(ExperimentConfig& config, const CliOverrides& overrides);

// Output directory: explicit flag, else DFL_OUT_DIR, else `fallback`.
std::filesystem::path resolve_out_dir(const std::optional<std::string>& flag, const std::filesystem::path& fallback);

// Each command writes its files under out_dir and a short summary to log.
void cmd_gen_topology(const ExperimentConfig& config, const std::filesystem::path& out_dir, std::ostream& log);
void cmd_route(const ExperimentConfig& config, const std::optional<std::filesystem::path>& topology_file,
               const std::filesystem::path& out_dir, bool sweep, std::ostream& log);
void cmd_simulate(const ExperimentConfig& config, const std::filesystem::path& out_dir, std::ostream& log);
void cmd_analyze(const std::filesystem::path& run_dir, const std::filesystem::path& out_dir, std::ostream& log);

// Writers shared by the commands (exposed for tests).
std::string metrics_csv(const ExperimentResult& result);
std::string rounds_csv(const ExperimentResult& result);
std::string loss_ledger_csv(const ExperimentResult& result);
nlohmann::json trace_json(const ExperimentResult& result, const ExperimentConfig& config);
nlohmann::json analyze_trace(const nlohmann::json& trace, const ExperimentConfig& config);

}  // namespace dfl
