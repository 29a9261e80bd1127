#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssvi/diagnostics.hpp"
#include "ssvi/optimizer.hpp"
#include "ssvi/target.hpp"

namespace ssvi {

/// Exit codes of the command-line front end.
enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitRuntime = 3 };

/// Command-line values that take precedence over the config file.
struct CliOverrides {
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> mc_samples;
};

struct BenchSweep {
  std::vector<int> dims{2};
  std::vector<double> deltas{1.0, 0.5, 0.25};
  double rho = 0.5;  // equicorrelation of the Gaussian targets
};

struct ExperimentConfig {
  nlohmann::json target_json;
  std::string base_dir;  // relative input paths resolve against the config file
  std::unique_ptr<TargetPotential> target;
  ConstantOverrides constant_overrides;

  std::optional<double> radius, width;
  PgdConfig pgd;
  std::optional<Vector> alpha;

  ResidualOptions residual;
  std::size_t mc_n = 20000;
  std::string source = "fit";  // fit | oracle | params
  std::string params_path;

  BenchSweep bench;
  std::string output_dir = "out";
  std::uint64_t seed = 0;
};

/// Parses and validates; throws ConfigError carrying the offending field path.
ExperimentConfig load_config(const std::string& path, const CliOverrides& overrides = {});
ExperimentConfig parse_config(const nlohmann::json& j, const std::string& base_dir, const CliOverrides& overrides = {});

/// Each command writes into cfg.output_dir and returns an exit code. Validation failures
/// throw ConfigError; run_command turns exceptions into exit codes.
int cmd_fit(const ExperimentConfig& cfg, std::ostream& err);
int cmd_oracle_gaussian(const ExperimentConfig& cfg, std::ostream& err);
int cmd_diagnose(const ExperimentConfig& cfg, std::ostream& err);
int cmd_compare(const ExperimentConfig& cfg, std::ostream& err);
int cmd_bench(const ExperimentConfig& cfg, std::ostream& err);

/// Loads the config and dispatches; maps ConfigError/InputError to 2 and other failures to 3.
int run_command(const std::string& command, const std::string& config_path, const CliOverrides& overrides,
                std::ostream& err);

}  // namespace ssvi
