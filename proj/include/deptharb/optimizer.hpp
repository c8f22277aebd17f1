#pragma once

#include "deptharb/losses.hpp"
#include "deptharb/metrics.hpp"
#include "deptharb/scene.hpp"
#include "deptharb/surrogate.hpp"

#include <cmath>
#include <optional>
#include <vector>

namespace deptharb {

/// First step index of stage two: floor(stage1_fraction * total_steps).
inline int stage_boundary(const GuidanceConfig& cfg) {
  return static_cast<int>(std::floor(cfg.stage1_fraction * cfg.total_steps));
}

inline Stage stage_of(int step, const GuidanceConfig& cfg) {
  if (step < 0 || step >= cfg.total_steps)
    throw InputError("stage_of: step " + std::to_string(step) + " outside [0, " + std::to_string(cfg.total_steps) + ")");
  return step < stage_boundary(cfg) ? Stage::one : Stage::two;
}

/// eta0 * eta_decay^step
inline double step_size(int step, const GuidanceConfig& cfg) {
  return cfg.eta0 * std::pow(cfg.eta_decay, step);
}

/// Stage label of the evaluation that follows the last update. It inherits the
/// last step's stage; a zero-step run is stage one unless stage one is empty.
inline Stage final_stage(const GuidanceConfig& cfg) {
  if (cfg.total_steps == 0) return cfg.stage1_fraction > 0.0 ? Stage::one : Stage::two;
  return stage_of(cfg.total_steps - 1, cfg);
}

struct MetricSnapshot {
  std::optional<double> focr_mean;
  double miou_all = 0.0;
};

template <typename Scalar>
struct StepRecord {
  int step = 0;
  Stage stage = Stage::one;
  double eta = 0.0;
  LossBreakdown<Scalar> losses;
  std::optional<MetricSnapshot> metrics;
};

template <typename Scalar>
struct Trajectory {
  /// total_steps + 1 entries; entry k is evaluated before update k, the last
  /// one after the final update.
  std::vector<StepRecord<Scalar>> records;
  LatentState<Scalar> final_latent;
  AttentionField<Scalar> final_field;
};

struct RunOptions {
  /// Record a metric snapshot every this many steps; 0 disables.
  int snapshot_every = 0;
  double rel_threshold = 0.5;
};

/// Plain staged gradient descent on the latent:
///   render -> staged loss -> d/dA -> d/dz -> z -= eta_t * grad
template <typename Scalar>
Trajectory<Scalar> run_guidance(const SceneSpec& scene, const GuidanceConfig& cfg, LatentState<Scalar> latent,
                                const RunOptions& opts = {}) {
  cfg.validate();
  const auto pairs = derive_occlusion_pairs(scene);
  const LossContext<Scalar> ctx(scene, pairs);

  Trajectory<Scalar> traj;
  traj.records.reserve(static_cast<std::size_t>(cfg.total_steps) + 1);

  auto evaluate = [&](int step, Stage stage, const AttentionField<Scalar>& field) {
    StepRecord<Scalar> rec;
    rec.step = step;
    rec.stage = stage;
    rec.eta = step_size(step, cfg);
    rec.losses = staged_loss(field, ctx, cfg, stage);
    if (!std::isfinite(static_cast<double>(rec.losses.total))) throw NumericalAbort(step, "loss");
    if (opts.snapshot_every > 0 && step % opts.snapshot_every == 0) {
      const auto m = evaluate_metrics(field, scene, pairs, Scalar(opts.rel_threshold));
      rec.metrics = MetricSnapshot{m.focr.mean, m.miou.all};
    }
    traj.records.push_back(std::move(rec));
  };

  AttentionField<Scalar> field = render_attention(latent, scene);
  for (int t = 0; t < cfg.total_steps; ++t) {
    const Stage stage = stage_of(t, cfg);
    evaluate(t, stage, field);
    const Scalar eta(step_size(t, cfg));
    for (int it = 0; it < cfg.inner_iters; ++it) {
      const GradField<Scalar> g = grad_staged_loss(field, ctx, cfg, stage);
      const LatentState<Scalar> lg = backprop_to_latent(latent, scene, field, g);
      if (!lg.all_finite()) throw NumericalAbort(static_cast<std::size_t>(t), "gradient");
      latent.descend(eta, lg);
      if (!latent.all_finite()) throw NumericalAbort(static_cast<std::size_t>(t), "latent");
      field = render_attention(latent, scene);
    }
  }
  evaluate(cfg.total_steps, final_stage(cfg), field);

  traj.final_latent = std::move(latent);
  traj.final_field = std::move(field);
  return traj;
}

}  // namespace deptharb
