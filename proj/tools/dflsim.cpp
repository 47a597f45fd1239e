#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dfl/expcli.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized federated learning over multi-hop wireless networks"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> scheme;
  std::optional<std::string> policy;
  std::optional<std::string> topology_file;
  std::string run_dir;
  bool sweep = false;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config (JSON); defaults apply when omitted");
    sub->add_option("--out", out_dir, "output directory (else $DFL_OUT_DIR, else .)");
    sub->add_option("--seed-override", seed, "replace the seed list and topology seed");
    sub->add_option("--scheme", scheme, "routing scheme");
    sub->add_option("--policy", policy, "pruning policy: optimal, fixed or none");
  };
  CLI::App* gen = app.add_subcommand("gen-topology", "generate and write the topology");
  common(gen);
  CLI::App* route = app.add_subcommand("route", "build broadcast trees and the latency report");
  common(route);
  route->add_option("--topology", topology_file, "topology JSON written by gen-topology");
  route->add_flag("--sweep", sweep, "also sweep theta, psi, bandwidth and t_max");
  CLI::App* sim = app.add_subcommand("simulate", "run the training experiment for every seed");
  common(sim);
  CLI::App* analyze = app.add_subcommand("analyze", "analyze a finished simulate run");
  analyze->add_option("run_dir", run_dir, "directory written by simulate")->required();
  analyze->add_option("--out", out_dir, "output directory (default: the run directory)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (analyze->parsed()) {
      dfl::cmd_analyze(run_dir, dfl::resolve_out_dir(out_dir, run_dir), std::cout);
      return 0;
    }
    dfl::ExperimentConfig config = config_path.empty() ? dfl::default_config() : dfl::load_config(config_path);
    if (config_path.empty()) dfl::apply_overrides(config, {});
    dfl::apply_overrides(config, {seed, scheme, policy});
    const auto out = dfl::resolve_out_dir(out_dir, ".");
    if (gen->parsed()) {
      dfl::cmd_gen_topology(config, out, std::cout);
    } else if (route->parsed()) {
      std::optional<std::filesystem::path> topo;
      if (topology_file) topo = *topology_file;
      dfl::cmd_route(config, topo, out, sweep, std::cout);
    } else {
      dfl::cmd_simulate(config, out, std::cout);
    }
  } catch (const dfl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
