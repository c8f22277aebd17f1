#include "deptharb/commands.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace {

using deptharb::CliOptions;

struct ConfigFlags {
  std::optional<int> steps;
  std::optional<double> stage1_frac;
  std::optional<double> eta;
  std::optional<double> eta_decay;
  std::optional<double> lambda0;
  std::optional<double> alpha;
  std::optional<double> tau;
  std::optional<double> lambda_ortho;
  std::optional<double> lambda_compact;
  std::optional<double> epsilon;
  std::optional<int> inner_iters;

  nlohmann::json to_overrides() const {
    nlohmann::json j = nlohmann::json::object();
    if (steps) j["total_steps"] = *steps;
    if (stage1_frac) j["stage1_fraction"] = *stage1_frac;
    if (eta) j["eta0"] = *eta;
    if (eta_decay) j["eta_decay"] = *eta_decay;
    if (lambda0) j["lambda0"] = *lambda0;
    if (alpha) j["alpha"] = *alpha;
    if (tau) j["tau"] = *tau;
    if (lambda_ortho) j["lambda_ortho"] = *lambda_ortho;
    if (lambda_compact) j["lambda_compact"] = *lambda_compact;
    if (epsilon) j["epsilon"] = *epsilon;
    if (inner_iters) j["inner_iters"] = *inner_iters;
    return j;
  }
};

void add_common(CLI::App* cmd, CliOptions& o, ConfigFlags& c) {
  cmd->add_option("--scene", o.scene_path, "Scene JSON file (default: built-in canonical scene)");
  cmd->add_option("--preset", o.preset, "Default weights: main or appendix")->check(CLI::IsMember({"main", "appendix"}));
  cmd->add_option("--mode", o.mode, "Latent surrogate: raster or blob")->check(CLI::IsMember({"raster", "blob"}));
  cmd->add_option("--seed", o.seed, "Seed for latent initialization and sampling");
  cmd->add_option("--steps", c.steps, "Guidance steps (total_steps)");
  cmd->add_option("--stage1-frac", c.stage1_frac, "Fraction of steps in stage one");
  cmd->add_option("--eta", c.eta, "Base step size eta0");
  cmd->add_option("--eta-decay", c.eta_decay, "Per-step multiplicative step decay");
  cmd->add_option("--lambda0", c.lambda0, "Base repulsion weight");
  cmd->add_option("--alpha", c.alpha, "Depth modulation sharpness");
  cmd->add_option("--tau", c.tau, "Depth modulation temperature");
  cmd->add_option("--lambda-ortho", c.lambda_ortho, "Weight of the arbitration term");
  cmd->add_option("--lambda-compact", c.lambda_compact, "Weight of the compactness term");
  cmd->add_option("--epsilon", c.epsilon, "Stability constant");
  cmd->add_option("--inner-iters", c.inner_iters, "Gradient updates per step");
  cmd->add_option("--report", o.report_path, "Write the JSON report here");
  cmd->add_option("--rel-threshold", o.rel_threshold, "Relative threshold for layout masks");
  cmd->add_flag("--no-timestamp", o.no_timestamp, "Leave the report timestamp empty");
}

std::vector<double> parse_csv(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const double v = std::stod(item, &used);
    if (used != item.size()) throw deptharb::InputError("--values: bad number '" + item + "'");
    out.push_back(v);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Depth-ordered attention arbitration guidance engine"};
  app.require_subcommand(1);

  CliOptions o;
  ConfigFlags c;
  std::string values_csv;
  std::optional<int> stage;

  auto* run = app.add_subcommand("run", "Optimize a scene and report losses and metrics");
  add_common(run, o, c);
  run->add_option("--dump", o.dump_path, "Write the final attention field here");

  auto* grad = app.add_subcommand("grad-check", "Compare analytic gradients with finite differences");
  add_common(grad, o, c);
  grad->add_option("--samples", o.samples, "Coordinates per space and stage");
  grad->add_option("--tol", o.tol, "Relative tolerance");
  grad->add_option("--stage", stage, "Check only this stage (1 or 2)");

  auto* sweep = app.add_subcommand("sweep", "Run one optimization per parameter value");
  add_common(sweep, o, c);
  sweep->add_option("--param", o.param, "Parameter to sweep")->required();
  sweep->add_option("--values", values_csv, "Comma-separated values")->required();

  auto* eval = app.add_subcommand("eval", "Compute metrics for an attention dump");
  add_common(eval, o, c);
  eval->add_option("--dump", o.dump_in_path, "Attention dump to evaluate")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return deptharb::exit_input_error;
  }

  o.overrides = c.to_overrides();
  o.stage = stage;

  if (run->parsed()) return deptharb::cmd_run(o, std::cout, std::cerr);
  if (grad->parsed()) return deptharb::cmd_grad_check(o, std::cout, std::cerr);
  if (eval->parsed()) return deptharb::cmd_eval(o, std::cout, std::cerr);
  try {
    o.values = parse_csv(values_csv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return deptharb::exit_input_error;
  }
  return deptharb::cmd_sweep(o, std::cout, std::cerr);
}
