#include "deptharb/io.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iterator>
#include <sstream>

namespace deptharb {

// ---------------------------------------------------------------------------
// Scene files

SceneFile parse_scene_file(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SceneError(std::nullopt, "syntax", e.what());
  }
  SceneFile out;
  out.scene = scene_from_json(doc);
  if (doc.contains("config")) {
    if (!doc.at("config").is_object()) throw SceneError(std::nullopt, "config", "must be an object");
    out.config = doc.at("config");
  }
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

SceneFile load_scene_file(const std::string& path) { return parse_scene_file(read_text_file(path)); }

nlohmann::json scene_to_json(const SceneSpec& scene) {
  nlohmann::json objects = nlohmann::json::array();
  for (const auto& o : scene.objects)
    objects.push_back({{"id", o.id},
                       {"label", o.label},
                       {"bbox", {o.bbox.x_min, o.bbox.y_min, o.bbox.x_max, o.bbox.y_max}},
                       {"depth", o.depth}});
  return {{"grid", {{"height", scene.grid_height}, {"width", scene.grid_width}}}, {"objects", objects}};
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << text;
}

// ---------------------------------------------------------------------------
// Configuration

Preset parse_preset(const std::string& name) {
  if (name == "main") return Preset::main;
  if (name == "appendix") return Preset::appendix;
  throw InputError("unknown preset '" + name + "' (expected main or appendix)");
}

const char* to_string(Preset p) { return p == Preset::main ? "main" : "appendix"; }

double default_eta0(LatentMode mode) { return mode == LatentMode::raster ? 1000.0 : 0.1; }

GuidanceConfig preset_defaults(Preset preset, LatentMode mode) {
  GuidanceConfig cfg;
  if (preset == Preset::appendix) {
    cfg.lambda_ortho = 0.2;
    cfg.lambda_compact = 0.5;
  }
  cfg.eta0 = default_eta0(mode);
  return cfg;
}

namespace {

struct DoubleField {
  const char* name;
  double GuidanceConfig::*member;
};

struct IntField {
  const char* name;
  int GuidanceConfig::*member;
};

constexpr DoubleField kDoubleFields[] = {
    {"lambda0", &GuidanceConfig::lambda0},
    {"alpha", &GuidanceConfig::alpha},
    {"tau", &GuidanceConfig::tau},
    {"lambda_ortho", &GuidanceConfig::lambda_ortho},
    {"lambda_compact", &GuidanceConfig::lambda_compact},
    {"epsilon", &GuidanceConfig::epsilon},
    {"eta0", &GuidanceConfig::eta0},
    {"eta_decay", &GuidanceConfig::eta_decay},
    {"stage1_fraction", &GuidanceConfig::stage1_fraction},
};

constexpr IntField kIntFields[] = {
    {"total_steps", &GuidanceConfig::total_steps},
    {"inner_iters", &GuidanceConfig::inner_iters},
};

}  // namespace

GuidanceConfig apply_config_overrides(GuidanceConfig cfg, const nlohmann::json& overrides) {
  if (!overrides.is_object()) throw InputError("config overrides must be a JSON object");
  for (const auto& [key, value] : overrides.items()) {
    bool known = false;
    for (const auto& f : kDoubleFields) {
      if (key != f.name) continue;
      if (!value.is_number()) throw InputError("config." + key + ": must be a number");
      cfg.*f.member = value.get<double>();
      known = true;
    }
    for (const auto& f : kIntFields) {
      if (key != f.name) continue;
      if (!value.is_number_integer()) throw InputError("config." + key + ": must be an integer");
      cfg.*f.member = value.get<int>();
      known = true;
    }
    if (!known) throw InputError("config." + key + ": unknown key");
  }
  cfg.validate();
  return cfg;
}

nlohmann::json config_to_json(const GuidanceConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : kDoubleFields) j[f.name] = cfg.*f.member;
  for (const auto& f : kIntFields) j[f.name] = cfg.*f.member;
  return j;
}

double get_config_value(const GuidanceConfig& cfg, const std::string& key) {
  for (const auto& f : kDoubleFields)
    if (key == f.name) return cfg.*f.member;
  for (const auto& f : kIntFields)
    if (key == f.name) return cfg.*f.member;
  throw InputError("unknown config key '" + key + "'");
}

void set_config_value(GuidanceConfig& cfg, const std::string& key, double value) {
  for (const auto& f : kDoubleFields)
    if (key == f.name) {
      cfg.*f.member = value;
      return;
    }
  for (const auto& f : kIntFields)
    if (key == f.name) {
      if (value != std::floor(value)) throw InputError("config." + key + ": must be an integer");
      cfg.*f.member = static_cast<int>(value);
      return;
    }
  throw InputError("unknown config key '" + key + "'");
}

// ---------------------------------------------------------------------------
// Attention dumps

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  using U = std::make_unsigned_t<T>;
  U u = static_cast<U>(v);
  for (std::size_t b = 0; b < sizeof(T); ++b) out.push_back(static_cast<std::uint8_t>((u >> (8 * b)) & 0xFFu));
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
  T v = 0;
  for (std::size_t b = 0; b < sizeof(T); ++b) v |= static_cast<T>(static_cast<T>(bytes[offset + b]) << (8 * b));
  return v;
}

constexpr std::uint8_t kMagic[4] = {0x44, 0x41, 0x52, 0x42};
constexpr std::size_t kHeaderSize = 4 + 2 + 4 + 4 + 4 + 8;

}  // namespace

std::vector<std::uint8_t> encode_dump(const AttentionFieldXd& field, std::uint64_t seed) {
  if (field.size() == 0) throw InputError("encode_dump: empty field");
  const auto h = static_cast<std::uint32_t>(field.height());
  const auto w = static_cast<std::uint32_t>(field.width());
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  out.reserve(kHeaderSize + 4 * field.size() * h * w);
  put_le<std::uint16_t>(out, kDumpVersion);
  put_le<std::uint32_t>(out, h);
  put_le<std::uint32_t>(out, w);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(field.size()));
  put_le<std::uint64_t>(out, seed);
  for (const auto& m : field.maps) {
    if (m.rows() != field.height() || m.cols() != field.width())
      throw InputError("encode_dump: maps differ in size");
    for (Eigen::Index k = 0; k < m.size(); ++k)
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(m.data()[k])));
  }
  return out;
}

AttentionDump decode_dump(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderSize) throw InputError("attention dump: truncated header");
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin()))
    throw InputError("attention dump: bad magic (expected DARB)");
  const auto version = get_le<std::uint16_t>(bytes, 4);
  if (version != kDumpVersion)
    throw InputError("attention dump: unsupported version " + std::to_string(version));
  const auto h = get_le<std::uint32_t>(bytes, 6);
  const auto w = get_le<std::uint32_t>(bytes, 10);
  const auto k = get_le<std::uint32_t>(bytes, 14);
  AttentionDump dump;
  dump.seed = get_le<std::uint64_t>(bytes, 18);
  if (h == 0 || w == 0 || k == 0) throw InputError("attention dump: zero dimension");

  const std::uint64_t count = std::uint64_t(h) * w * k;
  if (bytes.size() != kHeaderSize + 4 * count)
    throw InputError("attention dump: payload size does not match " + std::to_string(k) + "x" +
                     std::to_string(h) + "x" + std::to_string(w));

  std::size_t offset = kHeaderSize;
  for (std::uint32_t i = 0; i < k; ++i) {
    GridXd m(h, w);
    for (Eigen::Index p = 0; p < m.size(); ++p, offset += 4)
      m.data()[p] = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(bytes, offset)));
    check_attention_map(m);
    dump.field.maps.push_back(std::move(m));
  }
  return dump;
}

void write_dump(const std::string& path, const AttentionFieldXd& field, std::uint64_t seed) {
  const auto bytes = encode_dump(field, seed);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

AttentionDump read_dump(const std::string& path) {
  const std::string text = read_text_file(path);
  const auto* p = reinterpret_cast<const std::uint8_t*>(text.data());
  return decode_dump(std::span<const std::uint8_t>(p, text.size()));
}

AttentionFieldXd round_to_float(const AttentionFieldXd& field) {
  AttentionFieldXd out;
  for (const auto& m : field.maps) out.maps.push_back(m.cast<float>().cast<double>());
  return out;
}

// ---------------------------------------------------------------------------
// Reports

double mean_interference(const LossBreakdown<double>& b) {
  if (b.interference.empty()) return 0.0;
  double acc = 0.0;
  for (double v : b.interference) acc += v;
  return acc / static_cast<double>(b.interference.size());
}

double mean_variance(const LossBreakdown<double>& b) {
  if (b.var.empty()) return 0.0;
  double acc = 0.0;
  for (double v : b.var) acc += v;
  return acc / static_cast<double>(b.var.size());
}

namespace {

nlohmann::json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json make_report(const ReportInputs& in) {
  const SceneSpec& scene = *in.scene;
  const auto& b = *in.losses;
  const auto& m = *in.metrics;

  nlohmann::json per_object = nlohmann::json::array();
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const auto& o = scene.objects[i];
    per_object.push_back({{"id", o.id},
                          {"label", o.label},
                          {"depth", o.depth},
                          {"f", b.f[i]},
                          {"e_in", b.e_in[i]},
                          {"e_out", b.e_out[i]},
                          {"mu", {b.mu[i].x, b.mu[i].y}},
                          {"var", b.var[i]},
                          {"miou", m.miou.per_object[i]}});
  }

  nlohmann::json per_pair = nlohmann::json::array();
  for (std::size_t k = 0; k < in.pairs->size(); ++k) {
    const auto& p = (*in.pairs)[k];
    per_pair.push_back({{"foreground_id", p.foreground_id},
                        {"background_id", p.background_id},
                        {"interference", b.interference[k]},
                        {"weight", b.weight[k]},
                        {"focr", optional_number(m.focr.per_pair[k])}});
  }

  nlohmann::json config = config_to_json(in.config);
  config["mode"] = to_string(in.mode);
  config["preset"] = in.preset;
  config["rel_threshold"] = in.rel_threshold;

  return {
      {"losses",
       {{"stage", static_cast<int>(b.stage)},
        {"steps_run", in.steps_run},
        {"align", b.align},
        {"ortho", b.ortho},
        {"compact", b.compact},
        {"total", b.total}}},
      {"per_object", per_object},
      {"per_pair", per_pair},
      {"metrics",
       {{"miou_fg", optional_number(m.miou.fg)},
        {"miou_bg", optional_number(m.miou.bg)},
        {"miou_all", m.miou.all},
        {"focr_mean", optional_number(m.focr.mean)},
        {"mean_interference", mean_interference(b)},
        {"mean_var", mean_variance(b)},
        {"bor", nullptr},
        {"fbs", nullptr}}},
      {"config", config},
      {"seed", in.seed},
      {"timestamp", in.timestamp},
  };
}

namespace {

void write_json(std::ostringstream& os, const nlohmann::json& j, int indent, int depth) {
  const std::string pad(static_cast<std::size_t>(indent * (depth + 1)), ' ');
  const std::string close_pad(static_cast<std::size_t>(indent * depth), ' ');
  const char* nl = indent > 0 ? "\n" : "";
  switch (j.type()) {
    case nlohmann::json::value_t::object: {
      if (j.empty()) {
        os << "{}";
        return;
      }
      os << '{' << nl;
      bool first = true;
      for (const auto& [key, value] : j.items()) {
        if (!first) os << ',' << nl;
        first = false;
        os << pad << nlohmann::json(key).dump() << (indent > 0 ? ": " : ":");
        write_json(os, value, indent, depth + 1);
      }
      os << nl << close_pad << '}';
      return;
    }
    case nlohmann::json::value_t::array: {
      if (j.empty()) {
        os << "[]";
        return;
      }
      os << '[' << nl;
      bool first = true;
      for (const auto& value : j) {
        if (!first) os << ',' << nl;
        first = false;
        os << pad;
        write_json(os, value, indent, depth + 1);
      }
      os << nl << close_pad << ']';
      return;
    }
    case nlohmann::json::value_t::number_float: {
      const double v = j.get<double>();
      if (!std::isfinite(v)) {
        os << "null";
        return;
      }
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      std::string s(buf);
      if (s.find_first_of(".eE") == std::string::npos) s += ".0";
      os << s;
      return;
    }
    default:
      os << j.dump();
  }
}

}  // namespace

std::string serialize_json(const nlohmann::json& doc, int indent) {
  std::ostringstream os;
  write_json(os, doc, indent, 0);
  os << '\n';
  return os.str();
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace deptharb
