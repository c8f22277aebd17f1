#pragma once

#include "deptharb/losses.hpp"
#include "deptharb/scene.hpp"
#include "deptharb/surrogate.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace deptharb {

/// Finite-difference verification of the analytic gradients.
///
/// Forward evaluations for the differences run in long double so that
/// cancellation in (L(x+h) - L(x-h)) stays well below the comparison
/// tolerance; analytic gradients are computed in double.
struct GradCheckOptions {
  int samples = 1000;
  double tol = 1e-5;
  /// Entries whose magnitude is at most near_zero are compared absolutely.
  double near_zero = 1e-10;
  double abs_tol = 1e-9;
  double step = 1e-6;
  std::uint64_t seed = 0;
  std::vector<Stage> stages{Stage::one, Stage::two};
  std::vector<LatentMode> modes{LatentMode::raster, LatentMode::blob};
  /// How many worst offenders to keep.
  std::size_t keep_worst = 5;
};

enum class GradSpace { attention, latent };

struct GradSample {
  GradSpace space = GradSpace::attention;
  LatentMode mode = LatentMode::raster;
  Stage stage = Stage::one;
  Eigen::Index index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double error = 0.0;
  bool relative = true;
  bool ok = true;

  std::string describe() const;
};

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t failures = 0;
  double max_rel_error = 0.0;
  double max_abs_error_near_zero = 0.0;
  /// In stage two the analytic gradient equals align + compact terms bit for bit.
  bool stage2_ortho_free = true;
  std::vector<GradSample> worst;

  bool passed() const { return failures == 0 && stage2_ortho_free; }
};

/// Compares one analytic/numeric pair under the options' rule.
GradSample compare_gradient(double analytic, double numeric, const GradCheckOptions& opts);

/// Attention-space samples on a seeded random field with entries in [0, 2],
/// plus latent-space samples on a seeded init_latent state for each mode.
GradCheckResult grad_check(const SceneSpec& scene, const GuidanceConfig& cfg, const GradCheckOptions& opts);

/// Seeded random scene with `objects` boxes, distinct depths and a grid of
/// height x width.
SceneSpec random_scene(std::uint64_t seed, int objects, int height, int width);

/// Seeded field with i.i.d. U[0, 2] entries.
AttentionFieldXd random_field(const SceneSpec& scene, std::uint64_t seed);

}  // namespace deptharb
