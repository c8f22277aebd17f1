#pragma once

#include "deptharb/attention.hpp"
#include "deptharb/core.hpp"
#include "deptharb/scene.hpp"

#include <optional>
#include <set>
#include <vector>

namespace deptharb {

struct LayoutIoU {
  std::vector<double> per_object;
  /// Absent when the group is empty.
  std::optional<double> fg;
  std::optional<double> bg;
  double all = 0.0;
};

struct FocrReport {
  /// Index-aligned with the pairs; absent when the rasterized intersection is empty.
  std::vector<std::optional<double>> per_pair;
  /// Mean over the pairs that have a value; absent if none do.
  std::optional<double> mean;
};

struct MetricReport {
  LayoutIoU miou;
  FocrReport focr;
};

/// Intersection over union of two binary masks. Two empty masks score 1.
inline double mask_iou(const MaskGrid& a, const MaskGrid& b) {
  if (!same_shape(a.rows(), a.cols(), b.rows(), b.cols())) throw InputError("mask_iou: dimension mismatch");
  long inter = 0;
  long uni = 0;
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    const bool x = a.data()[k] != 0;
    const bool y = b.data()[k] != 0;
    inter += (x && y);
    uni += (x || y);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace detail {

inline std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

}  // namespace detail

/// IoU of threshold_mask(A_i) against the rasterized box of each object. An
/// object is in the fg group if it is the foreground of any occlusion pair.
template <typename Scalar>
LayoutIoU layout_miou(const AttentionField<Scalar>& field, const SceneSpec& scene, Scalar rel_threshold) {
  check_field_matches(field, scene);
  const auto masks = scene_masks(scene);
  std::set<int> foreground;
  for (const auto& p : derive_occlusion_pairs(scene)) foreground.insert(p.foreground_id);

  LayoutIoU out;
  std::vector<double> fg, bg;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const double iou = mask_iou(threshold_mask(field.maps[i], rel_threshold), masks[i]);
    out.per_object.push_back(iou);
    (foreground.count(scene.objects[i].id) ? fg : bg).push_back(iou);
  }
  out.fg = detail::mean_of(fg);
  out.bg = detail::mean_of(bg);
  out.all = detail::mean_of(out.per_object).value_or(0.0);
  return out;
}

/// Fraction of the rasterized box intersection won by the foreground object
/// under pseudo_segment.
template <typename Scalar>
FocrReport focr(const AttentionField<Scalar>& field, const SceneSpec& scene, const std::vector<OcclusionPair>& pairs) {
  const LabelGrid winners = pseudo_segment(field, scene);
  const auto masks = scene_masks(scene);
  FocrReport out;
  std::vector<double> values;
  for (const auto& p : pairs) {
    const auto fg = scene.index_of(p.foreground_id);
    const auto bg = scene.index_of(p.background_id);
    if (!fg || !bg) throw InputError("focr: pair references an unknown id");
    long total = 0;
    long won = 0;
    for (Eigen::Index k = 0; k < winners.size(); ++k) {
      if (!masks[*fg].data()[k] || !masks[*bg].data()[k]) continue;
      ++total;
      won += winners.data()[k] == static_cast<int>(*fg);
    }
    if (total == 0) {
      out.per_pair.push_back(std::nullopt);
      continue;
    }
    const double r = static_cast<double>(won) / static_cast<double>(total);
    out.per_pair.push_back(r);
    values.push_back(r);
  }
  out.mean = detail::mean_of(values);
  return out;
}

template <typename Scalar>
MetricReport evaluate_metrics(const AttentionField<Scalar>& field, const SceneSpec& scene,
                              const std::vector<OcclusionPair>& pairs, Scalar rel_threshold) {
  return {layout_miou(field, scene, rel_threshold), focr(field, scene, pairs)};
}

}  // namespace deptharb
