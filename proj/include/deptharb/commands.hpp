#pragma once

#include "deptharb/gradcheck.hpp"
#include "deptharb/io.hpp"
#include "deptharb/losses.hpp"
#include "deptharb/metrics.hpp"
#include "deptharb/optimizer.hpp"
#include "deptharb/scene.hpp"
#include "deptharb/surrogate.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace deptharb {

/// Stable process exit codes.
enum ExitCode : int { exit_ok = 0, exit_input_error = 1, exit_numerical_abort = 2, exit_grad_check_failed = 3 };

/// Flags shared by every subcommand; unused ones are ignored.
struct CliOptions {
  std::string scene_path;
  std::string dump_in_path;
  std::string preset = "main";
  std::string mode = "raster";
  std::uint64_t seed = 42;
  /// Config keys set on the command line; highest precedence.
  nlohmann::json overrides = nlohmann::json::object();
  std::string dump_path;
  std::string report_path;
  double rel_threshold = 0.5;

  int samples = 1000;
  double tol = 1e-5;
  std::optional<int> stage;

  std::string param;
  std::vector<double> values;

  /// Omit the wall-clock timestamp so reports are byte-reproducible.
  bool no_timestamp = false;
};

/// Scene plus the fully merged configuration.
struct ResolvedInputs {
  SceneSpec scene;
  GuidanceConfig config;
  LatentMode mode = LatentMode::raster;
};

/// defaults(preset, mode) < scene "config" block < flag overrides.
ResolvedInputs resolve_inputs(const CliOptions& opts);

struct RunResult {
  Trajectory<double> trajectory;
  MetricReport metrics;
  nlohmann::json report;
};

/// init_latent + run_guidance + final metrics, fully determined by its inputs.
RunResult run_scene(const SceneSpec& scene, const GuidanceConfig& cfg, LatentMode mode, std::uint64_t seed,
                    double rel_threshold, const std::string& preset = "main", const std::string& timestamp = "");

struct SweepRow {
  double value = 0.0;
  LossBreakdown<double> final_losses;
  MetricReport metrics;
  double mean_interference = 0.0;
  double mean_var = 0.0;
  nlohmann::json report;
};

/// Parameters accepted by the sweep command.
const std::vector<std::string>& sweepable_parameters();

/// One independent run per value, executed concurrently on up to `threads`
/// workers (0 = DEPTHARB_THREADS, else hardware concurrency).
std::vector<SweepRow> run_sweep(const SceneSpec& scene, const GuidanceConfig& base, LatentMode mode,
                                std::uint64_t seed, double rel_threshold, const std::string& param,
                                const std::vector<double>& values, unsigned threads = 0);

int cmd_run(const CliOptions& opts, std::ostream& out, std::ostream& err);
int cmd_grad_check(const CliOptions& opts, std::ostream& out, std::ostream& err);
int cmd_sweep(const CliOptions& opts, std::ostream& out, std::ostream& err);
int cmd_eval(const CliOptions& opts, std::ostream& out, std::ostream& err);

}  // namespace deptharb
