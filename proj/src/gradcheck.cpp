#include "deptharb/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace deptharb {

namespace {

using Wide = long double;

const char* space_name(GradSpace s) { return s == GradSpace::attention ? "attention" : "latent"; }

/// Up to `count` distinct indices from [0, n), in increasing order.
std::vector<Eigen::Index> sample_indices(Eigen::Index n, int count, std::mt19937_64& rng) {
  std::vector<Eigen::Index> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  if (count >= n) return all;
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(static_cast<std::size_t>(count));
  std::sort(all.begin(), all.end());
  return all;
}

void record(GradCheckResult& result, GradSample s, const GradCheckOptions& opts) {
  ++result.checked;
  if (s.relative)
    result.max_rel_error = std::max(result.max_rel_error, s.error);
  else
    result.max_abs_error_near_zero = std::max(result.max_abs_error_near_zero, s.error);
  if (!s.ok) ++result.failures;

  auto badness = [&](const GradSample& g) { return g.error / (g.relative ? opts.tol : opts.abs_tol); };
  result.worst.push_back(s);
  std::sort(result.worst.begin(), result.worst.end(),
            [&](const GradSample& a, const GradSample& b) { return badness(a) > badness(b); });
  if (result.worst.size() > opts.keep_worst) result.worst.resize(opts.keep_worst);
}

Eigen::Index field_entry_count(const AttentionFieldXd& f) {
  Eigen::Index n = 0;
  for (const auto& m : f.maps) n += m.size();
  return n;
}

Wide& field_entry(AttentionField<Wide>& f, Eigen::Index k) {
  for (auto& m : f.maps) {
    if (k < m.size()) return m.data()[k];
    k -= m.size();
  }
  throw InputError("field entry index out of range");
}

double grad_entry(const GradField<double>& g, Eigen::Index k) {
  for (const auto& m : g) {
    if (k < m.size()) return m.data()[k];
    k -= m.size();
  }
  throw InputError("gradient entry index out of range");
}

void check_attention_space(const SceneSpec& scene, const std::vector<OcclusionPair>& pairs, const GuidanceConfig& cfg,
                           Stage stage, const GradCheckOptions& opts, std::mt19937_64& rng, GradCheckResult& result) {
  const AttentionFieldXd field = random_field(scene, rng());
  const LossContext<double> ctx(scene, pairs);
  const LossContext<Wide> wide_ctx(scene, pairs);
  const GradField<double> analytic = grad_staged_loss(field, ctx, cfg, stage);

  if (stage == Stage::two) {
    GradField<double> expected = grad_align(field, ctx, cfg);
    const GradField<double> gc = grad_compact(field, ctx, cfg);
    for (std::size_t i = 0; i < expected.size(); ++i) {
      expected[i] += double(cfg.lambda_compact) * gc[i];
      if (expected[i] != analytic[i]) result.stage2_ortho_free = false;
    }
  }

  AttentionField<Wide> wide = field.cast<Wide>();
  const Wide h(opts.step);
  for (Eigen::Index k : sample_indices(field_entry_count(field), opts.samples, rng)) {
    Wide& entry = field_entry(wide, k);
    const Wide saved = entry;
    entry = saved + h;
    const Wide up = staged_loss(wide, wide_ctx, cfg, stage).total;
    entry = saved - h;
    const Wide down = staged_loss(wide, wide_ctx, cfg, stage).total;
    entry = saved;

    GradSample s = compare_gradient(grad_entry(analytic, k), static_cast<double>((up - down) / (Wide(2) * h)), opts);
    s.space = GradSpace::attention;
    s.stage = stage;
    s.index = k;
    record(result, s, opts);
  }
}

void check_latent_space(const SceneSpec& scene, const std::vector<OcclusionPair>& pairs, const GuidanceConfig& cfg,
                        Stage stage, LatentMode mode, const GradCheckOptions& opts, std::mt19937_64& rng,
                        GradCheckResult& result) {
  const LatentStateXd z = init_latent(scene, mode, rng());
  const LossContext<double> ctx(scene, pairs);
  const LossContext<Wide> wide_ctx(scene, pairs);

  const AttentionFieldXd field = render_attention(z, scene);
  const LatentStateXd analytic = backprop_to_latent(z, scene, field, grad_staged_loss(field, ctx, cfg, stage));

  LatentState<Wide> wide = z.cast<Wide>();
  const Wide h(opts.step);
  auto loss_at = [&](const LatentState<Wide>& state) {
    return staged_loss(render_attention(state, scene), wide_ctx, cfg, stage).total;
  };

  for (Eigen::Index k : sample_indices(z.parameter_count(), opts.samples, rng)) {
    Wide& p = wide.param(k);
    const Wide saved = p;
    p = saved + h;
    const Wide up = loss_at(wide);
    p = saved - h;
    const Wide down = loss_at(wide);
    p = saved;

    GradSample s = compare_gradient(analytic.param(k), static_cast<double>((up - down) / (Wide(2) * h)), opts);
    s.space = GradSpace::latent;
    s.mode = mode;
    s.stage = stage;
    s.index = k;
    record(result, s, opts);
  }
}

}  // namespace

std::string GradSample::describe() const {
  std::ostringstream os;
  os.precision(6);
  os << space_name(space);
  if (space == GradSpace::latent) os << '/' << to_string(mode);
  os << " stage " << static_cast<int>(stage) << " index " << index << ": analytic " << analytic << " numeric "
     << numeric << (relative ? " rel err " : " abs err ") << error << (ok ? "" : "  FAIL");
  return os.str();
}

GradSample compare_gradient(double analytic, double numeric, const GradCheckOptions& opts) {
  GradSample s;
  s.analytic = analytic;
  s.numeric = numeric;
  const double diff = std::abs(analytic - numeric);
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  if (scale > opts.near_zero) {
    s.relative = true;
    s.error = diff / scale;
    s.ok = s.error <= opts.tol;
  } else {
    s.relative = false;
    s.error = diff;
    s.ok = s.error <= opts.abs_tol;
  }
  return s;
}

GradCheckResult grad_check(const SceneSpec& scene, const GuidanceConfig& cfg, const GradCheckOptions& opts) {
  validate_scene(scene);
  cfg.validate();
  const auto pairs = derive_occlusion_pairs(scene);
  std::mt19937_64 rng(opts.seed);
  GradCheckResult result;
  for (Stage stage : opts.stages) {
    check_attention_space(scene, pairs, cfg, stage, opts, rng, result);
    for (LatentMode mode : opts.modes) check_latent_space(scene, pairs, cfg, stage, mode, opts, rng, result);
  }
  return result;
}

SceneSpec random_scene(std::uint64_t seed, int objects, int height, int width) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> corner(0.0, 0.5);
  std::uniform_real_distribution<double> extent(0.25, 0.5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SceneSpec scene;
  scene.grid_height = height;
  scene.grid_width = width;
  for (int k = 0; k < objects; ++k) {
    SceneObject o;
    o.id = k;
    o.label = "obj" + std::to_string(k);
    o.bbox.x_min = corner(rng);
    o.bbox.y_min = corner(rng);
    o.bbox.x_max = o.bbox.x_min + extent(rng);
    o.bbox.y_max = o.bbox.y_min + extent(rng);
    o.depth = unit(rng);
    scene.objects.push_back(o);
  }
  validate_scene(scene);
  return scene;
}

AttentionFieldXd random_field(const SceneSpec& scene, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> entry(0.0, 2.0);
  AttentionFieldXd field;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    GridXd m(scene.grid_height, scene.grid_width);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = entry(rng);
    field.maps.push_back(std::move(m));
  }
  return field;
}

}  // namespace deptharb
