#pragma once

#include "deptharb/attention.hpp"
#include "deptharb/core.hpp"
#include "deptharb/scene.hpp"

#include <Eigen/Core>

#include <cmath>
#include <vector>

namespace deptharb {

/// Every tunable of the guidance objective and its optimizer.
struct GuidanceConfig {
  double lambda0 = 0.5;
  double alpha = 1.0;
  double tau = 1.0;
  double lambda_ortho = 0.5;
  double lambda_compact = 0.2;
  double epsilon = 1e-8;
  double eta0 = 0.1;
  double eta_decay = 1.0;
  double stage1_fraction = 0.5;
  int total_steps = 200;
  /// Gradient updates per guidance step.
  int inner_iters = 1;

  /// Throws InputError naming the first field out of range.
  void validate() const;

  friend bool operator==(const GuidanceConfig&, const GuidanceConfig&) = default;
};

inline void GuidanceConfig::validate() const {
  auto fail = [](const char* field, const char* rule) {
    throw InputError(std::string("config.") + field + ": " + rule);
  };
  if (!(lambda0 > 0)) fail("lambda0", "must be > 0");
  if (!std::isfinite(alpha)) fail("alpha", "must be finite");
  if (!(tau > 0)) fail("tau", "must be > 0");
  if (!(lambda_ortho >= 0)) fail("lambda_ortho", "must be >= 0");
  if (!(lambda_compact >= 0)) fail("lambda_compact", "must be >= 0");
  if (!(epsilon > 0)) fail("epsilon", "must be > 0");
  if (!(eta0 >= 0) || !std::isfinite(eta0)) fail("eta0", "must be >= 0");
  if (!(eta_decay > 0 && eta_decay <= 1)) fail("eta_decay", "must lie in (0, 1]");
  if (!(stage1_fraction >= 0 && stage1_fraction <= 1)) fail("stage1_fraction", "must lie in [0, 1]");
  if (total_steps < 0) fail("total_steps", "must be >= 0");
  if (inner_iters < 1) fail("inner_iters", "must be >= 1");
}

enum class Stage { one = 1, two = 2 };

template <typename Scalar>
struct Vec2 {
  Scalar x{0};
  Scalar y{0};
};

template <typename Scalar>
struct Energies {
  Scalar e_in{0};
  Scalar e_out{0};
};

/// Per-term values of the staged objective plus the diagnostics behind them.
template <typename Scalar>
struct LossBreakdown {
  Stage stage = Stage::one;
  Scalar align{0};
  Scalar ortho{0};
  Scalar compact{0};
  Scalar total{0};

  std::vector<Scalar> f;
  std::vector<Scalar> e_in;
  std::vector<Scalar> e_out;
  std::vector<Vec2<Scalar>> mu;
  std::vector<Scalar> var;

  /// Index-aligned with the occlusion pairs.
  std::vector<Scalar> interference;
  std::vector<Scalar> weight;
};

/// d L / d A_i(x, y), one grid per object.
template <typename Scalar>
using GradField = std::vector<Grid<Scalar>>;

/// Masks, coordinates and resolved pair indices for one scene. Built once and
/// reused across the many evaluations of an optimization or gradient check.
template <typename Scalar>
struct LossContext {
  struct ResolvedPair {
    std::size_t fg = 0;
    std::size_t bg = 0;
  };

  const SceneSpec* scene = nullptr;
  std::vector<MaskGrid> masks;
  std::vector<Scalar> mask_area;
  std::vector<ResolvedPair> pairs;
  CoordGrid<Scalar> coords;

  LossContext(const SceneSpec& s, const std::vector<OcclusionPair>& occlusion_pairs)
      : scene(&s), masks(scene_masks(s)), coords(s.grid_height, s.grid_width) {
    for (const auto& m : masks) mask_area.push_back(Scalar(ordered_sum(m.template cast<double>())));
    for (const auto& p : occlusion_pairs) {
      const auto fg = s.index_of(p.foreground_id);
      const auto bg = s.index_of(p.background_id);
      if (!fg || !bg)
        throw InputError("occlusion pair (" + std::to_string(p.foreground_id) + ", " +
                         std::to_string(p.background_id) + ") references an unknown id");
      pairs.push_back({*fg, *bg});
    }
  }
};

// ---------------------------------------------------------------------------
// Primitive terms

/// In-box and out-of-box energy, accumulated row-major in one pass.
template <typename Scalar>
Energies<Scalar> attention_energies(const AttentionMap<Scalar>& map, const MaskGrid& mask) {
  if (!same_shape(map.rows(), map.cols(), mask.rows(), mask.cols()))
    throw InputError("attention_energies: dimension mismatch");
  Energies<Scalar> e;
  for (Eigen::Index y = 0; y < map.rows(); ++y)
    for (Eigen::Index x = 0; x < map.cols(); ++x) {
      if (mask(y, x))
        e.e_in += map(y, x);
      else
        e.e_out += map(y, x);
    }
  return e;
}

template <typename Scalar>
Scalar alignment_ratio(Scalar e_in, Scalar e_out, Scalar epsilon) {
  return e_in / (e_in + e_out + epsilon);
}

/// Background mass inside the foreground mask, per mask pixel.
template <typename Scalar>
Scalar interference(const AttentionMap<Scalar>& map_j, const MaskGrid& mask_i, Scalar epsilon) {
  if (!same_shape(map_j.rows(), map_j.cols(), mask_i.rows(), mask_i.cols()))
    throw InputError("interference: dimension mismatch");
  Scalar overlap(0);
  Scalar area(0);
  for (Eigen::Index y = 0; y < map_j.rows(); ++y)
    for (Eigen::Index x = 0; x < map_j.cols(); ++x)
      if (mask_i(y, x)) {
        overlap += map_j(y, x);
        area += Scalar(1);
      }
  return overlap / (area + epsilon);
}

/// lambda0 * exp(alpha * (d_j - d_i) / tau); d_i is the foreground depth.
template <typename Scalar = double>
Scalar arbitration_weight(Scalar d_i, Scalar d_j, const GuidanceConfig& cfg) {
  using std::exp;
  return Scalar(cfg.lambda0) * exp(Scalar(cfg.alpha) * (d_j - d_i) / Scalar(cfg.tau));
}

template <typename Scalar>
Vec2<Scalar> spatial_mean(const AttentionMap<Scalar>& norm_map, const CoordGrid<Scalar>& coords) {
  Vec2<Scalar> mu;
  for (Eigen::Index y = 0; y < norm_map.rows(); ++y)
    for (Eigen::Index x = 0; x < norm_map.cols(); ++x) {
      mu.x += norm_map(y, x) * coords.px(y, x);
      mu.y += norm_map(y, x) * coords.py(y, x);
    }
  return mu;
}

template <typename Scalar>
Scalar spatial_variance(const AttentionMap<Scalar>& norm_map, const CoordGrid<Scalar>& coords, Vec2<Scalar> mu) {
  Scalar var(0);
  for (Eigen::Index y = 0; y < norm_map.rows(); ++y)
    for (Eigen::Index x = 0; x < norm_map.cols(); ++x) {
      const Scalar dx = coords.px(y, x) - mu.x;
      const Scalar dy = coords.py(y, x) - mu.y;
      var += norm_map(y, x) * (dx * dx + dy * dy);
    }
  return var;
}

// ---------------------------------------------------------------------------
// Losses

namespace detail {

template <typename Scalar>
void fill_align(const AttentionField<Scalar>& field, const LossContext<Scalar>& ctx, Scalar eps,
                LossBreakdown<Scalar>& out) {
  const auto& objects = ctx.scene->objects;
  out.align = Scalar(0);
  out.f.resize(field.size());
  out.e_in.resize(field.size());
  out.e_out.resize(field.size());
  for (std::size_t i = 0; i < field.size(); ++i) {
    const auto e = attention_energies(field.maps[i], ctx.masks[i]);
    const Scalar f = alignment_ratio(e.e_in, e.e_out, eps);
    out.e_in[i] = e.e_in;
    out.e_out[i] = e.e_out;
    out.f[i] = f;
    out.align += Scalar(objects[i].depth) * (Scalar(1) - f) * (Scalar(1) - f);
  }
}

template <typename Scalar>
void fill_ortho(const AttentionField<Scalar>& field, const LossContext<Scalar>& ctx, const GuidanceConfig& cfg,
                LossBreakdown<Scalar>& out) {
  const auto& objects = ctx.scene->objects;
  const Scalar eps(cfg.epsilon);
  out.ortho = Scalar(0);
  out.interference.clear();
  out.weight.clear();
  for (const auto& p : ctx.pairs) {
    const Scalar I = interference(field.maps[p.bg], ctx.masks[p.fg], eps);
    const Scalar w = arbitration_weight(Scalar(objects[p.fg].depth), Scalar(objects[p.bg].depth), cfg);
    out.interference.push_back(I);
    out.weight.push_back(w);
    out.ortho += w * I;
  }
}

template <typename Scalar>
void fill_compact(const AttentionField<Scalar>& field, const LossContext<Scalar>& ctx, Scalar eps,
                  LossBreakdown<Scalar>& out) {
  const auto& objects = ctx.scene->objects;
  out.compact = Scalar(0);
  out.mu.resize(field.size());
  out.var.resize(field.size());
  for (std::size_t i = 0; i < field.size(); ++i) {
    const AttentionMap<Scalar> norm = field.maps[i] / (ordered_sum(field.maps[i]) + eps);
    const auto mu = spatial_mean(norm, ctx.coords);
    const Scalar var = spatial_variance(norm, ctx.coords, mu);
    out.mu[i] = mu;
    out.var[i] = var;
    out.compact += Scalar(objects[i].depth) * var;
  }
}

}  // namespace detail

/// Stage one: align + lambda_ortho * ortho + lambda_compact * compact.
/// Stage two drops the ortho term.
template <typename Scalar>
Scalar staged_total(Scalar align, Scalar ortho, Scalar compact, const GuidanceConfig& cfg, Stage stage) {
  if (stage == Stage::one) return align + Scalar(cfg.lambda_ortho) * ortho + Scalar(cfg.lambda_compact) * compact;
  return align + Scalar(cfg.lambda_compact) * compact;
}

/// sum_i d_i (1 - f_i)^2.
template <typename Scalar>
Scalar loss_align(const AttentionField<Scalar>& field, const LossContext<Scalar>& ctx, const GuidanceConfig& cfg) {
  check_field_matches(field, *ctx.scene);
  LossBreakdown<Scalar> b;
  detail::fill_align(field, ctx, Scalar(cfg.epsilon), b);
  return b.align;
}

template <typename Scalar>
Scalar loss_align(const AttentionField<Scalar>& field, const SceneSpec& scene, const GuidanceConfig& cfg) {
  return loss_align(field, LossContext<Scalar>(scene, {}), cfg);
}

/// sum over pairs of lambda_ij * I_{i<-j}.
template <typename Scalar>
Scalar loss_ortho(const AttentionField<Scalar>& field, const LossContext<Scalar>& ctx, const GuidanceConfig& cfg) {
  check_field_matches(field, *ctx.scene);
  LossBreakdown<Scalar> b;
  detail::fill_ortho(field, ctx, cfg, b);
  return b.ortho;
}

template <typename Scalar>
Scalar loss_ortho(const AttentionField<Scalar>& field, const SceneSpec& scene,
                  const std::vector<OcclusionPair>& pairs, const GuidanceConfig& cfg) {
  return loss_ortho(field, LossContext<Scalar>(scene, pairs), cfg);
}

/// sum_i d_i Var_i over the normalized maps.
template <typename Scalar>
Scalar loss_compact(const AttentionField<Scalar>& field, const LossContext<Scalar>& ctx, const GuidanceConfig& cfg) {
  check_field_matches(field, *ctx.scene);
  LossBreakdown<Scalar> b;
  detail::fill_compact(field, ctx, Scalar(cfg.epsilon), b);
  return b.compact;
}

template <typename Scalar>
Scalar loss_compact(const AttentionField<Scalar>& field, const SceneSpec& scene, const GuidanceConfig& cfg) {
  return loss_compact(field, LossContext<Scalar>(scene, {}), cfg);
}

/// All three terms and their diagnostics. The ortho term is always reported;
/// it only enters the total in stage one.
template <typename Scalar>
LossBreakdown<Scalar> staged_loss(const AttentionField<Scalar>& field, const LossContext<Scalar>& ctx,
                                  const GuidanceConfig& cfg, Stage stage) {
  check_field_matches(field, *ctx.scene);
  LossBreakdown<Scalar> b;
  b.stage = stage;
  const Scalar eps(cfg.epsilon);
  detail::fill_align(field, ctx, eps, b);
  detail::fill_ortho(field, ctx, cfg, b);
  detail::fill_compact(field, ctx, eps, b);
  b.total = staged_total(b.align, b.ortho, b.compact, cfg, stage);
  return b;
}

template <typename Scalar>
LossBreakdown<Scalar> staged_loss(const AttentionField<Scalar>& field, const SceneSpec& scene,
                                  const std::vector<OcclusionPair>& pairs, const GuidanceConfig& cfg, Stage stage) {
  return staged_loss(field, LossContext<Scalar>(scene, pairs), cfg, stage);
}

// ---------------------------------------------------------------------------
// Analytic gradients
//
// With S = sum A_i, D = S + eps and M the box mask:
//
//   f_i = e_in / D,   d f_i / d A_i(p) = (M(p) D - e_in) / D^2
//   d L_align / d A_i(p) = -2 d_i (1 - f_i) d f_i / d A_i(p)
//
//   d I_{i<-j} / d A_j(p) = M_i(p) / (sum M_i + eps)
//
// For the compactness term let s = S / D = sum of the normalized map. Then
// d mu / d A(p) = (p - mu) / D, and because sum_q Ã(q)(mu - p_q) = (s - 1) mu,
//
//   d Var / d A(p) = ( |p - mu|^2 - Var + 2 (s - 1) mu . (p - mu) ) / D.
//
// The (s - 1) = -eps / D factor is what remains of the mean's dependence; it
// vanishes only in the eps -> 0 limit.

template <typename Scalar>
GradField<Scalar> zero_grad(const AttentionField<Scalar>& field) {
  GradField<Scalar> g;
  g.reserve(field.size());
  for (const auto& m : field.maps) g.push_back(Grid<Scalar>::Zero(m.rows(), m.cols()));
  return g;
}

template <typename Scalar>
GradField<Scalar> grad_align(const AttentionField<Scalar>& field, const LossContext<Scalar>& ctx,
                             const GuidanceConfig& cfg) {
  check_field_matches(field, *ctx.scene);
  const Scalar eps(cfg.epsilon);
  GradField<Scalar> g = zero_grad(field);
  for (std::size_t i = 0; i < field.size(); ++i) {
    const auto e = attention_energies(field.maps[i], ctx.masks[i]);
    const Scalar denom = e.e_in + e.e_out + eps;
    const Scalar f = e.e_in / denom;
    const Scalar outer = Scalar(-2) * Scalar(ctx.scene->objects[i].depth) * (Scalar(1) - f) / (denom * denom);
    const Scalar g_in = outer * (denom - e.e_in);
    const Scalar g_out = outer * (-e.e_in);
    const MaskGrid& mask = ctx.masks[i];
    for (Eigen::Index k = 0; k < mask.size(); ++k) g[i].data()[k] = mask.data()[k] ? g_in : g_out;
  }
  return g;
}

/// Unweighted by lambda_ortho.
template <typename Scalar>
GradField<Scalar> grad_ortho(const AttentionField<Scalar>& field, const LossContext<Scalar>& ctx,
                             const GuidanceConfig& cfg) {
  check_field_matches(field, *ctx.scene);
  const Scalar eps(cfg.epsilon);
  const auto& objects = ctx.scene->objects;
  GradField<Scalar> g = zero_grad(field);
  for (const auto& p : ctx.pairs) {
    const Scalar w = arbitration_weight(Scalar(objects[p.fg].depth), Scalar(objects[p.bg].depth), cfg);
    const Scalar per_pixel = w / (ctx.mask_area[p.fg] + eps);
    const MaskGrid& mask = ctx.masks[p.fg];
    for (Eigen::Index k = 0; k < mask.size(); ++k)
      if (mask.data()[k]) g[p.bg].data()[k] += per_pixel;
  }
  return g;
}

/// Unweighted by lambda_compact.
template <typename Scalar>
GradField<Scalar> grad_compact(const AttentionField<Scalar>& field, const LossContext<Scalar>& ctx,
                               const GuidanceConfig& cfg) {
  check_field_matches(field, *ctx.scene);
  const Scalar eps(cfg.epsilon);
  GradField<Scalar> g = zero_grad(field);
  for (std::size_t i = 0; i < field.size(); ++i) {
    const auto& map = field.maps[i];
    const Scalar S = ordered_sum(map);
    const Scalar D = S + eps;
    const AttentionMap<Scalar> norm = map / D;
    const auto mu = spatial_mean(norm, ctx.coords);
    const Scalar var = spatial_variance(norm, ctx.coords, mu);
    const Scalar s_minus_1 = S / D - Scalar(1);
    const Scalar d_i(ctx.scene->objects[i].depth);
    for (Eigen::Index y = 0; y < map.rows(); ++y)
      for (Eigen::Index x = 0; x < map.cols(); ++x) {
        const Scalar dx = ctx.coords.px(y, x) - mu.x;
        const Scalar dy = ctx.coords.py(y, x) - mu.y;
        const Scalar dvar = (dx * dx + dy * dy - var + Scalar(2) * s_minus_1 * (mu.x * dx + mu.y * dy)) / D;
        g[i](y, x) = d_i * dvar;
      }
  }
  return g;
}

/// d L_t / d A for the given stage.
template <typename Scalar>
GradField<Scalar> grad_staged_loss(const AttentionField<Scalar>& field, const LossContext<Scalar>& ctx,
                                   const GuidanceConfig& cfg, Stage stage) {
  GradField<Scalar> g = grad_align(field, ctx, cfg);
  const Scalar wc(cfg.lambda_compact);
  const GradField<Scalar> gc = grad_compact(field, ctx, cfg);
  if (stage == Stage::one) {
    const Scalar wo(cfg.lambda_ortho);
    const GradField<Scalar> go = grad_ortho(field, ctx, cfg);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += wo * go[i] + wc * gc[i];
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += wc * gc[i];
  }
  return g;
}

template <typename Scalar>
GradField<Scalar> grad_staged_loss(const AttentionField<Scalar>& field, const SceneSpec& scene,
                                   const std::vector<OcclusionPair>& pairs, const GuidanceConfig& cfg, Stage stage) {
  return grad_staged_loss(field, LossContext<Scalar>(scene, pairs), cfg, stage);
}

}  // namespace deptharb
