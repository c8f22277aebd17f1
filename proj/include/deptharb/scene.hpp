#pragma once

#include "deptharb/core.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace deptharb {

/// Axis-aligned box in normalized image coordinates, x to the right, y down.
struct BBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double area() const { return (x_max - x_min) * (y_max - y_min); }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }
};

/// Intersection area; zero when the boxes only touch or are disjoint.
double overlap_area(const BBox& a, const BBox& b);

struct SceneObject {
  int id = 0;
  std::string label;
  BBox bbox;
  /// Distance to the camera in [0, 1]; smaller is closer.
  double depth = 0.0;
};

struct SceneSpec {
  int grid_height = 0;
  int grid_width = 0;
  std::vector<SceneObject> objects;

  std::size_t size() const { return objects.size(); }
  /// Position of the object with the given id, or nullopt.
  std::optional<std::size_t> index_of(int id) const;
};

struct OcclusionPair {
  int foreground_id = 0;
  int background_id = 0;

  friend bool operator==(const OcclusionPair&, const OcclusionPair&) = default;
};

/// Validation failure carrying the offending object position (if any) and field name.
class SceneError : public InputError {
 public:
  SceneError(std::optional<std::size_t> object_index, std::string field, const std::string& what);

  const std::optional<std::size_t>& object_index() const noexcept { return object_index_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::optional<std::size_t> object_index_;
  std::string field_;
};

/// Parses scene JSON text. The optional "config" block is ignored here; see io.hpp.
SceneSpec parse_scene(std::string_view text);

/// Throws SceneError when any invariant of the scene is violated.
void validate_scene(const SceneSpec& scene);

/// Pixel (y, x) is set iff its center ((x+0.5)/W, (y+0.5)/H) lies in the
/// half-open box [x_min, x_max) x [y_min, y_max).
MaskGrid rasterize_mask(const BBox& bbox, int height, int width);

/// Masks for every object of the scene, index-aligned with scene.objects.
std::vector<MaskGrid> scene_masks(const SceneSpec& scene);

/// One pair per overlapping object pair with strictly ordered depths, the
/// closer object as foreground, sorted by (foreground_id, background_id).
std::vector<OcclusionPair> derive_occlusion_pairs(const SceneSpec& scene);

/// Built-in copy of the canonical two-object evaluation scene.
SceneSpec canonical_scene();

}  // namespace deptharb
