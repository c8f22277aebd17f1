#pragma once

#include "deptharb/core.hpp"
#include "deptharb/scene.hpp"

#include <cmath>
#include <span>
#include <utility>
#include <vector>

namespace deptharb {

template <typename Scalar>
using AttentionMap = Grid<Scalar>;

/// One non-negative map per scene object, all sharing H x W.
template <typename Scalar>
struct AttentionField {
  std::vector<AttentionMap<Scalar>> maps;

  std::size_t size() const { return maps.size(); }
  Eigen::Index height() const { return maps.empty() ? 0 : maps.front().rows(); }
  Eigen::Index width() const { return maps.empty() ? 0 : maps.front().cols(); }

  template <typename Other>
  AttentionField<Other> cast() const {
    AttentionField<Other> out;
    out.maps.reserve(maps.size());
    for (const auto& m : maps) out.maps.push_back(m.template cast<Other>());
    return out;
  }
};

using AttentionFieldXd = AttentionField<double>;

/// Normalized pixel-center coordinates p(x, y) = ((x+0.5)/W, (y+0.5)/H).
template <typename Scalar>
struct CoordGrid {
  Grid<Scalar> px;
  Grid<Scalar> py;

  CoordGrid(Eigen::Index height, Eigen::Index width) : px(height, width), py(height, width) {
    for (Eigen::Index y = 0; y < height; ++y)
      for (Eigen::Index x = 0; x < width; ++x) {
        px(y, x) = (Scalar(x) + Scalar(0.5)) / Scalar(width);
        py(y, x) = (Scalar(y) + Scalar(0.5)) / Scalar(height);
      }
  }
};

template <typename Scalar>
void check_attention_map(const AttentionMap<Scalar>& map) {
  for (Eigen::Index k = 0; k < map.size(); ++k) {
    const Scalar v = map.data()[k];
    if (!(v >= Scalar(0)) || !std::isfinite(static_cast<double>(v)))
      throw InputError("attention map entries must be finite and non-negative");
  }
}

/// Throws unless the field has one map per object with the scene's grid size.
template <typename Scalar>
void check_field_matches(const AttentionField<Scalar>& field, const SceneSpec& scene) {
  if (field.size() != scene.size())
    throw InputError("attention field has " + std::to_string(field.size()) + " maps for " +
                     std::to_string(scene.size()) + " objects");
  for (const auto& m : field.maps)
    if (!same_shape(m.rows(), m.cols(), scene.grid_height, scene.grid_width))
      throw InputError("attention map dimensions do not match the scene grid");
}

/// A / (sum(A) + epsilon).
template <typename Scalar>
AttentionMap<Scalar> normalize_map(const AttentionMap<Scalar>& map, Scalar epsilon) {
  check_attention_map(map);
  if (!(epsilon > Scalar(0))) throw InputError("normalize_map: epsilon must be positive");
  return map / (ordered_sum(map) + epsilon);
}

/// Element-wise arithmetic mean.
template <typename Scalar>
AttentionMap<Scalar> aggregate_maps(std::span<const AttentionMap<Scalar>> maps) {
  if (maps.empty()) throw InputError("aggregate_maps: empty list");
  AttentionMap<Scalar> acc = AttentionMap<Scalar>::Zero(maps.front().rows(), maps.front().cols());
  for (const auto& m : maps) {
    if (!same_shape(m.rows(), m.cols(), acc.rows(), acc.cols()))
      throw InputError("aggregate_maps: dimension mismatch");
    acc += m;
  }
  return acc / Scalar(maps.size());
}

/// Per-pixel argmax over object maps. Ties go to the smaller depth, then the
/// smaller id. Pixels where every map is zero get -1.
template <typename Scalar>
LabelGrid pseudo_segment(const AttentionField<Scalar>& field, const SceneSpec& scene) {
  check_field_matches(field, scene);
  const Eigen::Index h = scene.grid_height;
  const Eigen::Index w = scene.grid_width;
  LabelGrid winners = LabelGrid::Constant(h, w, -1);

  auto beats = [&](std::size_t a, std::size_t b, Scalar va, Scalar vb) {
    if (va != vb) return va > vb;
    const auto& oa = scene.objects[a];
    const auto& ob = scene.objects[b];
    if (oa.depth != ob.depth) return oa.depth < ob.depth;
    return oa.id < ob.id;
  };

  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) {
      int best = -1;
      Scalar best_v(0);
      for (std::size_t k = 0; k < field.size(); ++k) {
        const Scalar v = field.maps[k](y, x);
        if (v <= Scalar(0)) continue;
        if (best < 0 || beats(k, static_cast<std::size_t>(best), v, best_v)) {
          best = static_cast<int>(k);
          best_v = v;
        }
      }
      winners(y, x) = best;
    }
  return winners;
}

/// Pixel set iff A >= rel_threshold * max(A); an all-zero map gives an empty mask.
template <typename Scalar>
MaskGrid threshold_mask(const AttentionMap<Scalar>& map, Scalar rel_threshold) {
  if (!(rel_threshold > Scalar(0) && rel_threshold <= Scalar(1)))
    throw InputError("threshold_mask: rel_threshold must lie in (0, 1]");
  MaskGrid mask = MaskGrid::Zero(map.rows(), map.cols());
  const Scalar peak = map.size() ? map.maxCoeff() : Scalar(0);
  if (!(peak > Scalar(0))) return mask;
  const Scalar cut = rel_threshold * peak;
  for (Eigen::Index k = 0; k < map.size(); ++k) mask.data()[k] = map.data()[k] >= cut ? 1 : 0;
  return mask;
}

}  // namespace deptharb
