#pragma once

#include "diffspeed/cli/manifest.hpp"
#include "diffspeed/estimator.hpp"
#include "diffspeed/modem.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace diffspeed::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,       // anything not listed below
  kConfigError = 2,   // bad flag, environment value, config file key or parameter
  kIoError = 3,       // unreadable input, unwritable output
  kSchemaError = 4,   // malformed scene, suite, manifest, WAV or CSI container
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
EnvLookup process_environment();

/**
 * Runs one command line (arguments after the program name). Configuration
 * precedence: flags > DIFFSPEED_* environment variables > --config file > defaults.
 */
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
        const EnvLookup& env = process_environment());

/// Executes a fully resolved invocation and writes its outputs and manifests. Throws on error.
void execute(const Invocation& inv, std::ostream& out);

/// Maps the exception currently being handled to an exit code, printing a message.
int exit_code_for_current_exception(std::ostream& err);

struct RateSweepRow {
  double speed = 0.0;
  double csi_rate = 0.0;
  int scenes = 0;
  int windows = 0;
  int estimates = 0;
  double mean_abs_error = 0.0;   // missed windows count as a 0 m/s estimate
  double mean_speed = 0.0;       // over windows with an estimate
  double max_measurable = 0.0;
};

/// Mean absolute speed error per (speed, rate) over seeded scenes.
std::vector<RateSweepRow> run_rate_sweep(const nlohmann::json& suite, const ModemConfig& modem,
                                         const EstimatorConfig& est);

struct ContrastRow {
  std::string label;
  double true_speed = 0.0;
  std::string directions;
  double ase_speed = 0.0;        // mean over windows with an estimate
  double ase_rel_error = 0.0;
  int ase_estimates = 0;
  int windows = 0;
  double dfs_radial = 0.0;       // mean signed radial speed
  double dfs_abs = 0.0;          // mean |radial speed|
  int dfs_near_nyquist = 0;
  bool beyond_limit = false;     // true speed above the CSI-rate limit
};

std::vector<ContrastRow> run_dfs_contrast(const nlohmann::json& suite, const ModemConfig& modem,
                                          const EstimatorConfig& est);

}  // namespace diffspeed::cli
