#pragma once

#include "deptharb/attention.hpp"
#include "deptharb/losses.hpp"
#include "deptharb/metrics.hpp"
#include "deptharb/scene.hpp"
#include "deptharb/surrogate.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace deptharb {

// ---------------------------------------------------------------------------
// Scene files

struct SceneFile {
  SceneSpec scene;
  /// Contents of the optional "config" block; an empty object when absent.
  nlohmann::json config = nlohmann::json::object();
};

SceneSpec scene_from_json(const nlohmann::json& doc);
SceneFile parse_scene_file(std::string_view text);
SceneFile load_scene_file(const std::string& path);
std::string read_text_file(const std::string& path);

nlohmann::json scene_to_json(const SceneSpec& scene);

// ---------------------------------------------------------------------------
// Configuration
//
// Precedence: preset defaults < scene-file "config" block < command-line flags.
// Keys match the GuidanceConfig field names.

enum class Preset { main, appendix };

Preset parse_preset(const std::string& name);
const char* to_string(Preset p);

/// Default eta0 for a latent mode: raster logit gradients scale as 1/(H W), so
/// raster mode gets a much larger base step than blob mode.
double default_eta0(LatentMode mode);

GuidanceConfig preset_defaults(Preset preset, LatentMode mode);

/// Overwrites the fields named in `overrides`; unknown keys or wrongly typed
/// values raise InputError. The result is validated.
GuidanceConfig apply_config_overrides(GuidanceConfig cfg, const nlohmann::json& overrides);

nlohmann::json config_to_json(const GuidanceConfig& cfg);

/// Reads or writes a single field by name; used by the sweep command.
double get_config_value(const GuidanceConfig& cfg, const std::string& key);
void set_config_value(GuidanceConfig& cfg, const std::string& key, double value);

// ---------------------------------------------------------------------------
// Attention dumps
//
//   "DARB" | u16 version = 1 | u32 H | u32 W | u32 K | u64 seed |
//   K*H*W float32, object-major then row-major. All little-endian.

inline constexpr std::uint16_t kDumpVersion = 1;

struct AttentionDump {
  std::uint64_t seed = 0;
  AttentionFieldXd field;
};

/// Values are rounded to the nearest float32.
std::vector<std::uint8_t> encode_dump(const AttentionFieldXd& field, std::uint64_t seed);
AttentionDump decode_dump(std::span<const std::uint8_t> bytes);

void write_dump(const std::string& path, const AttentionFieldXd& field, std::uint64_t seed);
AttentionDump read_dump(const std::string& path);

/// The field as it reads back from a dump.
AttentionFieldXd round_to_float(const AttentionFieldXd& field);

// ---------------------------------------------------------------------------
// Reports

struct ReportInputs {
  const SceneSpec* scene = nullptr;
  const std::vector<OcclusionPair>* pairs = nullptr;
  const LossBreakdown<double>* losses = nullptr;
  const MetricReport* metrics = nullptr;
  GuidanceConfig config;
  LatentMode mode = LatentMode::raster;
  std::string preset = "main";
  double rel_threshold = 0.5;
  std::uint64_t seed = 0;
  int steps_run = 0;
  std::string timestamp;
};

/// Keys: losses, per_object, per_pair, metrics, config, seed, timestamp.
nlohmann::json make_report(const ReportInputs& in);

/// JSON text with every floating-point value written to 17 significant digits.
std::string serialize_json(const nlohmann::json& doc, int indent = 2);

void write_text_file(const std::string& path, const std::string& text);

std::string utc_timestamp();

double mean_interference(const LossBreakdown<double>& b);
double mean_variance(const LossBreakdown<double>& b);

}  // namespace deptharb
