#include "deptharb/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <iomanip>
#include <ostream>
#include <thread>

namespace deptharb {

ResolvedInputs resolve_inputs(const CliOptions& opts) {
  ResolvedInputs r;
  r.mode = parse_latent_mode(opts.mode);
  SceneFile file;
  if (opts.scene_path.empty())
    file.scene = canonical_scene();
  else
    file = load_scene_file(opts.scene_path);
  r.scene = std::move(file.scene);
  GuidanceConfig cfg = preset_defaults(parse_preset(opts.preset), r.mode);
  cfg = apply_config_overrides(cfg, file.config);
  cfg = apply_config_overrides(cfg, opts.overrides);
  r.config = cfg;
  return r;
}

RunResult run_scene(const SceneSpec& scene, const GuidanceConfig& cfg, LatentMode mode, std::uint64_t seed,
                    double rel_threshold, const std::string& preset, const std::string& timestamp) {
  const auto pairs = derive_occlusion_pairs(scene);
  RunResult result;
  result.trajectory = run_guidance(scene, cfg, init_latent(scene, mode, seed));
  result.metrics = evaluate_metrics(result.trajectory.final_field, scene, pairs, rel_threshold);

  ReportInputs in;
  in.scene = &scene;
  in.pairs = &pairs;
  in.losses = &result.trajectory.records.back().losses;
  in.metrics = &result.metrics;
  in.config = cfg;
  in.mode = mode;
  in.preset = preset;
  in.rel_threshold = rel_threshold;
  in.seed = seed;
  in.steps_run = cfg.total_steps;
  in.timestamp = timestamp;
  result.report = make_report(in);
  return result;
}

const std::vector<std::string>& sweepable_parameters() {
  static const std::vector<std::string> names{"lambda_ortho", "lambda_compact", "lambda0", "alpha",
                                              "tau",          "eta0",           "stage1_fraction"};
  return names;
}

namespace {

unsigned sweep_threads(unsigned requested, std::size_t jobs) {
  unsigned n = requested;
  if (n == 0) {
    if (const char* env = std::getenv("DEPTHARB_THREADS")) {
      const long v = std::strtol(env, nullptr, 10);
      if (v > 0) n = static_cast<unsigned>(v);
    }
  }
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return std::max(1u, std::min<unsigned>(n, static_cast<unsigned>(jobs)));
}

}  // namespace

std::vector<SweepRow> run_sweep(const SceneSpec& scene, const GuidanceConfig& base, LatentMode mode,
                                std::uint64_t seed, double rel_threshold, const std::string& param,
                                const std::vector<double>& values, unsigned threads) {
  const auto& names = sweepable_parameters();
  if (std::find(names.begin(), names.end(), param) == names.end())
    throw InputError("sweep: unknown parameter '" + param + "'");
  if (values.empty()) throw InputError("sweep: empty value list");

  std::vector<GuidanceConfig> configs;
  for (double v : values) {
    GuidanceConfig cfg = base;
    set_config_value(cfg, param, v);
    cfg.validate();
    configs.push_back(cfg);
  }

  std::vector<SweepRow> rows(values.size());
  std::vector<std::exception_ptr> errors(values.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < values.size(); k = next++) {
      try {
        RunResult r = run_scene(scene, configs[k], mode, seed, rel_threshold);
        SweepRow& row = rows[k];
        row.value = values[k];
        row.final_losses = r.trajectory.records.back().losses;
        row.metrics = r.metrics;
        row.mean_interference = mean_interference(row.final_losses);
        row.mean_var = mean_variance(row.final_losses);
        row.report = std::move(r.report);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };

  const unsigned n = sweep_threads(threads, values.size());
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return rows;
}

namespace {

template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const NumericalAbort& e) {
    err << "error: " << e.what() << '\n';
    return exit_numerical_abort;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_input_error;
  }
}

std::string fmt_optional(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

}  // namespace

int cmd_run(const CliOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ResolvedInputs in = resolve_inputs(opts);
    const std::string stamp = opts.no_timestamp ? std::string() : utc_timestamp();
    const RunResult r = run_scene(in.scene, in.config, in.mode, opts.seed, opts.rel_threshold, opts.preset, stamp);

    if (!opts.dump_path.empty()) write_dump(opts.dump_path, r.trajectory.final_field, opts.seed);
    if (!opts.report_path.empty()) write_text_file(opts.report_path, serialize_json(r.report));

    const auto& first = r.trajectory.records.front().losses;
    const auto& last = r.trajectory.records.back().losses;
    out << "steps " << in.config.total_steps << "  mode " << to_string(in.mode) << "  seed " << opts.seed << '\n'
        << std::setprecision(6) << "loss  initial " << first.total << "  final " << last.total << '\n'
        << "focr  " << fmt_optional(r.metrics.focr.mean) << "  miou_all " << fmt_optional(r.metrics.miou.all)
        << "  mean_interference " << mean_interference(last) << '\n';
    return int(exit_ok);
  });
}

int cmd_grad_check(const CliOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ResolvedInputs in = resolve_inputs(opts);
    GradCheckOptions go;
    go.samples = opts.samples;
    go.tol = opts.tol;
    go.seed = opts.seed;
    go.modes = {in.mode};
    if (opts.stage) {
      if (*opts.stage != 1 && *opts.stage != 2) throw InputError("--stage must be 1 or 2");
      go.stages = {static_cast<Stage>(*opts.stage)};
    }
    const GradCheckResult r = grad_check(in.scene, in.config, go);
    out << "checked " << r.checked << " coordinates, " << r.failures << " outside tolerance\n"
        << std::setprecision(3) << "worst relative error " << r.max_rel_error << " (tol " << go.tol << ")\n"
        << "worst near-zero absolute error " << r.max_abs_error_near_zero << " (tol " << go.abs_tol << ")\n"
        << "stage-2 gradient free of ortho term: " << (r.stage2_ortho_free ? "yes" : "NO") << '\n';
    if (r.passed()) {
      out << "PASS\n";
      return int(exit_ok);
    }
    out << "FAIL; worst offenders:\n";
    for (const auto& s : r.worst) out << "  " << s.describe() << '\n';
    return int(exit_grad_check_failed);
  });
}

int cmd_sweep(const CliOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (opts.param.empty()) throw InputError("sweep: --param is required");
    if (opts.values.empty()) throw InputError("sweep: --values must list at least one value");
    const ResolvedInputs in = resolve_inputs(opts);
    const auto rows = run_sweep(in.scene, in.config, in.mode, opts.seed, opts.rel_threshold, opts.param, opts.values);

    nlohmann::json table = nlohmann::json::array();
    for (const auto& row : rows) {
      table.push_back({{"value", row.value},
                       {"losses", row.report.at("losses")},
                       {"metrics", row.report.at("metrics")},
                       {"mean_interference", row.mean_interference},
                       {"mean_var", row.mean_var}});
    }
    const nlohmann::json doc{{"param", opts.param}, {"seed", opts.seed}, {"mode", to_string(in.mode)}, {"rows", table}};
    if (!opts.report_path.empty()) write_text_file(opts.report_path, serialize_json(doc));

    out << opts.param << "  total  mean_interference  mean_var  focr  miou_all\n";
    out << std::setprecision(6);
    for (const auto& row : rows)
      out << row.value << "  " << row.final_losses.total << "  " << row.mean_interference << "  " << row.mean_var
          << "  " << fmt_optional(row.metrics.focr.mean) << "  " << fmt_optional(row.metrics.miou.all) << '\n';
    return int(exit_ok);
  });
}

int cmd_eval(const CliOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (opts.dump_in_path.empty()) throw InputError("eval: --dump is required");
    const ResolvedInputs in = resolve_inputs(opts);
    const AttentionDump dump = read_dump(opts.dump_in_path);
    check_field_matches(dump.field, in.scene);

    const auto pairs = derive_occlusion_pairs(in.scene);
    const LossContext<double> ctx(in.scene, pairs);
    const LossBreakdown<double> losses = staged_loss(dump.field, ctx, in.config, final_stage(in.config));
    const MetricReport metrics = evaluate_metrics(dump.field, in.scene, pairs, opts.rel_threshold);

    ReportInputs ri;
    ri.scene = &in.scene;
    ri.pairs = &pairs;
    ri.losses = &losses;
    ri.metrics = &metrics;
    ri.config = in.config;
    ri.mode = in.mode;
    ri.preset = opts.preset;
    ri.rel_threshold = opts.rel_threshold;
    ri.seed = dump.seed;
    ri.steps_run = 0;
    ri.timestamp = opts.no_timestamp ? std::string() : utc_timestamp();
    const nlohmann::json report = make_report(ri);
    if (!opts.report_path.empty()) write_text_file(opts.report_path, serialize_json(report));

    out << "focr " << fmt_optional(metrics.focr.mean) << "  miou_all " << fmt_optional(metrics.miou.all)
        << "  miou_fg " << fmt_optional(metrics.miou.fg) << "  miou_bg " << fmt_optional(metrics.miou.bg) << '\n';
    return int(exit_ok);
  });
}

}  // namespace deptharb
