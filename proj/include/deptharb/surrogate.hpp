#pragma once

#include "deptharb/attention.hpp"
#include "deptharb/core.hpp"
#include "deptharb/losses.hpp"
#include "deptharb/scene.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace deptharb {

enum class LatentMode { raster, blob };

inline const char* to_string(LatentMode m) { return m == LatentMode::raster ? "raster" : "blob"; }

inline LatentMode parse_latent_mode(const std::string& s) {
  if (s == "raster") return LatentMode::raster;
  if (s == "blob") return LatentMode::blob;
  throw InputError("unknown mode '" + s + "' (expected raster or blob)");
}

/// Column layout of a blob parameter row.
enum BlobParam : Eigen::Index { center_x = 0, center_y, log_sigma_x, log_sigma_y, log_amplitude, blob_param_count };

template <typename Scalar>
using BlobMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, blob_param_count, Eigen::RowMajor>;

/// Parameters that render an attention field. Raster mode holds one logit grid
/// per object; blob mode holds one Gaussian (5 parameters) per object. The same
/// type doubles as the latent-space gradient.
template <typename Scalar>
struct LatentState {
  LatentMode mode = LatentMode::raster;
  std::vector<Grid<Scalar>> logits;
  BlobMatrix<Scalar> blobs;

  Eigen::Index parameter_count() const {
    if (mode == LatentMode::blob) return blobs.size();
    Eigen::Index n = 0;
    for (const auto& l : logits) n += l.size();
    return n;
  }

  /// Flat view over all parameters: object-major, then row-major.
  Scalar& param(Eigen::Index k) {
    if (mode == LatentMode::blob) return blobs.data()[k];
    for (auto& l : logits) {
      if (k < l.size()) return l.data()[k];
      k -= l.size();
    }
    throw InputError("latent parameter index out of range");
  }
  Scalar param(Eigen::Index k) const { return const_cast<LatentState*>(this)->param(k); }

  LatentState zeros_like() const {
    LatentState z;
    z.mode = mode;
    for (const auto& l : logits) z.logits.push_back(Grid<Scalar>::Zero(l.rows(), l.cols()));
    z.blobs = BlobMatrix<Scalar>::Zero(blobs.rows(), blob_param_count);
    return z;
  }

  /// this -= step * grad
  void descend(Scalar step, const LatentState& grad) {
    if (mode == LatentMode::blob) {
      blobs -= step * grad.blobs;
      return;
    }
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] -= step * grad.logits[i];
  }

  bool all_finite() const {
    if (mode == LatentMode::blob) return blobs.allFinite();
    for (const auto& l : logits)
      if (!l.allFinite()) return false;
    return true;
  }

  template <typename Other>
  LatentState<Other> cast() const {
    LatentState<Other> out;
    out.mode = mode;
    for (const auto& l : logits) out.logits.push_back(l.template cast<Other>());
    out.blobs = blobs.template cast<Other>();
    return out;
  }

  friend bool operator==(const LatentState& a, const LatentState& b) {
    if (a.mode != b.mode || a.logits.size() != b.logits.size()) return false;
    for (std::size_t i = 0; i < a.logits.size(); ++i)
      if (a.logits[i] != b.logits[i]) return false;
    return a.blobs.rows() == b.blobs.rows() && a.blobs == b.blobs;
  }
};

using LatentStateXd = LatentState<double>;

/// Raster logits are i.i.d. U[-1, 1]. Blobs start at the box center with
/// sigma = box extent / 4 and unit amplitude; centers get U[-0.05, 0.05]
/// jitter. Without a seed, raster logits are zero and blobs are unjittered.
inline LatentStateXd init_latent(const SceneSpec& scene, LatentMode mode, std::optional<std::uint64_t> seed) {
  LatentStateXd z;
  z.mode = mode;
  std::mt19937_64 rng(seed.value_or(0));
  if (mode == LatentMode::raster) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (std::size_t i = 0; i < scene.size(); ++i) {
      GridXd l = GridXd::Zero(scene.grid_height, scene.grid_width);
      if (seed)
        for (Eigen::Index k = 0; k < l.size(); ++k) l.data()[k] = unit(rng);
      z.logits.push_back(std::move(l));
    }
    z.blobs = BlobMatrix<double>::Zero(0, blob_param_count);
    return z;
  }

  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  z.blobs = BlobMatrix<double>::Zero(static_cast<Eigen::Index>(scene.size()), blob_param_count);
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const BBox& b = scene.objects[i].bbox;
    const auto r = static_cast<Eigen::Index>(i);
    z.blobs(r, center_x) = b.center_x();
    z.blobs(r, center_y) = b.center_y();
    if (seed) {
      z.blobs(r, center_x) += jitter(rng);
      z.blobs(r, center_y) += jitter(rng);
    }
    z.blobs(r, log_sigma_x) = std::log((b.x_max - b.x_min) / 4.0);
    z.blobs(r, log_sigma_y) = std::log((b.y_max - b.y_min) / 4.0);
    z.blobs(r, log_amplitude) = 0.0;
  }
  return z;
}

template <typename Scalar>
void check_latent_matches(const LatentState<Scalar>& z, const SceneSpec& scene) {
  if (z.mode == LatentMode::blob) {
    if (z.blobs.rows() != static_cast<Eigen::Index>(scene.size()))
      throw InputError("blob latent has wrong object count");
    return;
  }
  if (z.logits.size() != scene.size()) throw InputError("raster latent has wrong object count");
  for (const auto& l : z.logits)
    if (!same_shape(l.rows(), l.cols(), scene.grid_height, scene.grid_width))
      throw InputError("raster latent has wrong grid size");
}

/// Raster: A = exp(logit). Blob: A = amp * exp(-(u^2 / 2 sx^2 + v^2 / 2 sy^2))
/// at pixel centers, with sigma and amp exponentiated from their log form.
template <typename Scalar>
AttentionField<Scalar> render_attention(const LatentState<Scalar>& z, const SceneSpec& scene) {
  check_latent_matches(z, scene);
  AttentionField<Scalar> field;
  field.maps.reserve(scene.size());
  if (z.mode == LatentMode::raster) {
    for (const auto& l : z.logits) field.maps.push_back(l.array().exp().matrix());
    return field;
  }

  using std::exp;
  const CoordGrid<Scalar> coords(scene.grid_height, scene.grid_width);
  for (Eigen::Index i = 0; i < z.blobs.rows(); ++i) {
    const Scalar cx = z.blobs(i, center_x);
    const Scalar cy = z.blobs(i, center_y);
    const Scalar sx = exp(z.blobs(i, log_sigma_x));
    const Scalar sy = exp(z.blobs(i, log_sigma_y));
    const Scalar amp = exp(z.blobs(i, log_amplitude));
    AttentionMap<Scalar> m(scene.grid_height, scene.grid_width);
    for (Eigen::Index y = 0; y < m.rows(); ++y)
      for (Eigen::Index x = 0; x < m.cols(); ++x) {
        const Scalar u = coords.px(y, x) - cx;
        const Scalar v = coords.py(y, x) - cy;
        m(y, x) = amp * exp(-(u * u / (Scalar(2) * sx * sx) + v * v / (Scalar(2) * sy * sy)));
      }
    field.maps.push_back(std::move(m));
  }
  return field;
}

/// Chains d L / d A back to the latent parameters.
///
/// Raster: dL/dlogit = dL/dA * A. Blob, with g = dL/dA * A per pixel:
///   d/d center_x    = sum g u / sx^2
///   d/d center_y    = sum g v / sy^2
///   d/d log_sigma_x = sum g u^2 / sx^2
///   d/d log_sigma_y = sum g v^2 / sy^2
///   d/d log_amp     = sum g
///
/// `field` must be render_attention(z, scene).
template <typename Scalar>
LatentState<Scalar> backprop_to_latent(const LatentState<Scalar>& z, const SceneSpec& scene,
                                       const AttentionField<Scalar>& field, const GradField<Scalar>& grad_field) {
  check_latent_matches(z, scene);
  check_field_matches(field, scene);
  if (grad_field.size() != scene.size()) throw InputError("backprop_to_latent: gradient field object count mismatch");
  for (const auto& g : grad_field)
    if (!same_shape(g.rows(), g.cols(), scene.grid_height, scene.grid_width))
      throw InputError("backprop_to_latent: gradient field shape mismatch");

  LatentState<Scalar> out = z.zeros_like();
  if (z.mode == LatentMode::raster) {
    for (std::size_t i = 0; i < field.size(); ++i) out.logits[i] = grad_field[i].cwiseProduct(field.maps[i]);
    return out;
  }

  using std::exp;
  const CoordGrid<Scalar> coords(scene.grid_height, scene.grid_width);
  for (Eigen::Index i = 0; i < z.blobs.rows(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    const Scalar cx = z.blobs(i, center_x);
    const Scalar cy = z.blobs(i, center_y);
    const Scalar inv_sx2 = exp(Scalar(-2) * z.blobs(i, log_sigma_x));
    const Scalar inv_sy2 = exp(Scalar(-2) * z.blobs(i, log_sigma_y));
    Scalar gcx(0), gcy(0), glsx(0), glsy(0), gla(0);
    for (Eigen::Index y = 0; y < field.height(); ++y)
      for (Eigen::Index x = 0; x < field.width(); ++x) {
        const Scalar g = grad_field[k](y, x) * field.maps[k](y, x);
        const Scalar u = coords.px(y, x) - cx;
        const Scalar v = coords.py(y, x) - cy;
        gcx += g * u * inv_sx2;
        gcy += g * v * inv_sy2;
        glsx += g * u * u * inv_sx2;
        glsy += g * v * v * inv_sy2;
        gla += g;
      }
    out.blobs(i, center_x) = gcx;
    out.blobs(i, center_y) = gcy;
    out.blobs(i, log_sigma_x) = glsx;
    out.blobs(i, log_sigma_y) = glsy;
    out.blobs(i, log_amplitude) = gla;
  }
  return out;
}

template <typename Scalar>
LatentState<Scalar> backprop_to_latent(const LatentState<Scalar>& z, const SceneSpec& scene,
                                       const GradField<Scalar>& grad_field) {
  return backprop_to_latent(z, scene, render_attention(z, scene), grad_field);
}

}  // namespace deptharb
