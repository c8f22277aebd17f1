#include "deptharb/scene.hpp"

#include "deptharb/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

namespace deptharb {

double overlap_area(const BBox& a, const BBox& b) {
  const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

std::optional<std::size_t> SceneSpec::index_of(int id) const {
  for (std::size_t k = 0; k < objects.size(); ++k)
    if (objects[k].id == id) return k;
  return std::nullopt;
}

SceneError::SceneError(std::optional<std::size_t> object_index, std::string field,
                       const std::string& what)
    : InputError(object_index ? "objects[" + std::to_string(*object_index) + "]." + field + ": " + what
                              : field + ": " + what),
      object_index_(object_index),
      field_(std::move(field)) {}

void validate_scene(const SceneSpec& scene) {
  if (scene.grid_height < 2) throw SceneError(std::nullopt, "grid.height", "must be >= 2");
  if (scene.grid_width < 2) throw SceneError(std::nullopt, "grid.width", "must be >= 2");
  if (scene.objects.empty()) throw SceneError(std::nullopt, "objects", "at least one object required");

  std::set<int> ids;
  for (std::size_t k = 0; k < scene.objects.size(); ++k) {
    const SceneObject& o = scene.objects[k];
    if (o.id < 0) throw SceneError(k, "id", "must be non-negative");
    if (!ids.insert(o.id).second) throw SceneError(k, "id", "duplicate id " + std::to_string(o.id));
    const BBox& b = o.bbox;
    for (double c : {b.x_min, b.y_min, b.x_max, b.y_max})
      if (!std::isfinite(c) || c < 0.0 || c > 1.0)
        throw SceneError(k, "bbox", "coordinates must lie in [0,1]");
    if (!(b.x_min < b.x_max)) throw SceneError(k, "bbox", "x_min must be < x_max");
    if (!(b.y_min < b.y_max)) throw SceneError(k, "bbox", "y_min must be < y_max");
    if (!std::isfinite(o.depth) || o.depth < 0.0 || o.depth > 1.0)
      throw SceneError(k, "depth", "must lie in [0,1] (got " + std::to_string(o.depth) + ")");
  }
}

namespace {

int read_dim(const nlohmann::json& grid, const char* key) {
  const std::string field = std::string("grid.") + key;
  if (!grid.contains(key)) throw SceneError(std::nullopt, field, "missing");
  const auto& v = grid.at(key);
  if (!v.is_number_integer()) throw SceneError(std::nullopt, field, "must be an integer");
  return v.get<int>();
}

}  // namespace

SceneSpec scene_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw SceneError(std::nullopt, "scene", "top level must be an object");
  if (!doc.contains("grid") || !doc.at("grid").is_object())
    throw SceneError(std::nullopt, "grid", "missing grid dimensions");

  SceneSpec scene;
  scene.grid_height = read_dim(doc.at("grid"), "height");
  scene.grid_width = read_dim(doc.at("grid"), "width");

  if (!doc.contains("objects") || !doc.at("objects").is_array())
    throw SceneError(std::nullopt, "objects", "missing objects array");

  const auto& objects = doc.at("objects");
  for (std::size_t k = 0; k < objects.size(); ++k) {
    const auto& jo = objects[k];
    if (!jo.is_object()) throw SceneError(k, "object", "must be an object");
    SceneObject o;

    if (!jo.contains("id") || !jo.at("id").is_number_integer()) throw SceneError(k, "id", "missing or not an integer");
    o.id = jo.at("id").get<int>();

    if (jo.contains("label")) {
      if (!jo.at("label").is_string()) throw SceneError(k, "label", "must be a string");
      o.label = jo.at("label").get<std::string>();
    }

    if (!jo.contains("bbox")) throw SceneError(k, "bbox", "missing");
    const auto& jb = jo.at("bbox");
    if (!jb.is_array() || jb.size() != 4) throw SceneError(k, "bbox", "must be [x_min, y_min, x_max, y_max]");
    for (const auto& c : jb)
      if (!c.is_number()) throw SceneError(k, "bbox", "coordinates must be numbers");
    o.bbox = {jb[0].get<double>(), jb[1].get<double>(), jb[2].get<double>(), jb[3].get<double>()};

    if (!jo.contains("depth") || !jo.at("depth").is_number()) throw SceneError(k, "depth", "missing or not a number");
    o.depth = jo.at("depth").get<double>();

    scene.objects.push_back(std::move(o));
  }

  validate_scene(scene);
  return scene;
}

SceneSpec parse_scene(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SceneError(std::nullopt, "syntax", e.what());
  }
  return scene_from_json(doc);
}

MaskGrid rasterize_mask(const BBox& bbox, int height, int width) {
  if (height < 1 || width < 1) throw InputError("rasterize_mask: dimensions must be >= 1");
  MaskGrid mask = MaskGrid::Zero(height, width);
  for (int y = 0; y < height; ++y) {
    const double cy = (y + 0.5) / height;
    if (cy < bbox.y_min || cy >= bbox.y_max) continue;
    for (int x = 0; x < width; ++x) {
      const double cx = (x + 0.5) / width;
      if (cx >= bbox.x_min && cx < bbox.x_max) mask(y, x) = 1;
    }
  }
  return mask;
}

std::vector<MaskGrid> scene_masks(const SceneSpec& scene) {
  std::vector<MaskGrid> masks;
  masks.reserve(scene.size());
  for (const auto& o : scene.objects) masks.push_back(rasterize_mask(o.bbox, scene.grid_height, scene.grid_width));
  return masks;
}

std::vector<OcclusionPair> derive_occlusion_pairs(const SceneSpec& scene) {
  std::vector<OcclusionPair> pairs;
  for (std::size_t a = 0; a < scene.size(); ++a) {
    for (std::size_t b = a + 1; b < scene.size(); ++b) {
      const SceneObject& oa = scene.objects[a];
      const SceneObject& ob = scene.objects[b];
      if (oa.depth == ob.depth) continue;
      if (overlap_area(oa.bbox, ob.bbox) <= 0.0) continue;
      if (oa.depth < ob.depth)
        pairs.push_back({oa.id, ob.id});
      else
        pairs.push_back({ob.id, oa.id});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const OcclusionPair& l, const OcclusionPair& r) {
    return std::tie(l.foreground_id, l.background_id) < std::tie(r.foreground_id, r.background_id);
  });
  return pairs;
}

SceneSpec canonical_scene() {
  SceneSpec s;
  s.grid_height = 64;
  s.grid_width = 64;
  s.objects = {
      {0, "A", {0.15, 0.25, 0.65, 0.85}, 0.2},
      {1, "B", {0.35, 0.15, 0.90, 0.80}, 0.8},
  };
  return s;
}

}  // namespace deptharb
