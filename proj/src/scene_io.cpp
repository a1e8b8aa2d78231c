#include "diffspeed/scene_io.hpp"

#include "diffspeed/errors.hpp"

#include <fstream>
#include <string>

namespace diffspeed {

namespace {

const nlohmann::json& require(const nlohmann::json& j, const char* field) {
  if (!j.contains(field)) throw SchemaError(std::string("scene: missing required field '") + field + "'");
  return j.at(field);
}

double number(const nlohmann::json& v, const std::string& field) {
  if (!v.is_number()) throw SchemaError("scene: field '" + field + "' must be a number");
  return v.get<double>();
}

std::string text(const nlohmann::json& v, const std::string& field) {
  if (!v.is_string()) throw SchemaError("scene: field '" + field + "' must be a string");
  return v.get<std::string>();
}

template <class Parse>
auto parse_enum(const nlohmann::json& v, const std::string& field, Parse parse) {
  try {
    return parse(text(v, field));
  } catch (const InvalidParameter& e) {
    throw SchemaError("scene: field '" + field + "': " + e.what());
  }
}

}  // namespace

SceneParams scene_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("scene: expected a JSON object");
  SceneParams p;
  p.geometry = parse_enum(require(j, "geometry"), "geometry", parse_model_kind);

  const auto& ns = require(j, "num_scatterers");
  if (!ns.is_number_integer()) throw SchemaError("scene: field 'num_scatterers' must be an integer");
  p.num_scatterers = ns.get<int>();

  const auto& seed = require(j, "seed");
  if (!seed.is_number_integer() || seed.get<long long>() < 0) {
    throw SchemaError("scene: field 'seed' must be a non-negative integer");
  }
  p.seed = seed.get<std::uint64_t>();
  p.duration = number(require(j, "duration"), "duration");

  if (j.contains("speed_profile")) {
    const auto& prof = j.at("speed_profile");
    if (!prof.is_array() || prof.empty()) throw SchemaError("scene: field 'speed_profile' must be a non-empty array");
    p.speed_profile.clear();
    for (std::size_t i = 0; i < prof.size(); ++i) {
      const std::string at = "speed_profile[" + std::to_string(i) + "]";
      if (!prof[i].is_object()) throw SchemaError("scene: field '" + at + "' must be an object");
      if (!prof[i].contains("start")) throw SchemaError("scene: missing required field '" + at + ".start'");
      if (!prof[i].contains("speed")) throw SchemaError("scene: missing required field '" + at + ".speed'");
      p.speed_profile.push_back({number(prof[i].at("start"), at + ".start"), number(prof[i].at("speed"), at + ".speed")});
    }
  } else if (j.contains("speed")) {
    p.speed_profile = {{0.0, number(j.at("speed"), "speed")}};
  } else {
    throw SchemaError("scene: missing required field 'speed' (or 'speed_profile')");
  }

  if (j.contains("snr_db")) {
    const auto& s = j.at("snr_db");
    p.snr_db = s.is_null() ? std::nullopt : std::optional<double>(number(s, "snr_db"));
  }
  if (j.contains("directions")) p.directions = parse_enum(j.at("directions"), "directions", parse_direction_mode);
  if (j.contains("amplitudes")) p.amplitudes = parse_enum(j.at("amplitudes"), "amplitudes", parse_amplitude_mode);
  if (j.contains("path_length")) {
    const auto& r = j.at("path_length");
    if (!r.is_array() || r.size() != 2) throw SchemaError("scene: field 'path_length' must be [min, max]");
    p.path_length_min = number(r[0], "path_length[0]");
    p.path_length_max = number(r[1], "path_length[1]");
  }
  if (j.contains("dynamic_gain")) p.dynamic_gain = number(j.at("dynamic_gain"), "dynamic_gain");
  if (j.contains("sound_speed")) p.sound_speed = number(j.at("sound_speed"), "sound_speed");
  if (j.contains("static_paths")) {
    const auto& sp = j.at("static_paths");
    if (!sp.is_array()) throw SchemaError("scene: field 'static_paths' must be an array");
    p.static_paths.clear();
    for (std::size_t i = 0; i < sp.size(); ++i) {
      const std::string at = "static_paths[" + std::to_string(i) + "]";
      if (!sp[i].is_object()) throw SchemaError("scene: field '" + at + "' must be an object");
      if (!sp[i].contains("delay")) throw SchemaError("scene: missing required field '" + at + ".delay'");
      if (!sp[i].contains("gain")) throw SchemaError("scene: missing required field '" + at + ".gain'");
      StaticPath path;
      path.delay = number(sp[i].at("delay"), at + ".delay");
      const auto& g = sp[i].at("gain");
      if (g.is_array() && g.size() == 2) {
        path.gain = {number(g[0], at + ".gain[0]"), number(g[1], at + ".gain[1]")};
      } else {
        path.gain = {number(g, at + ".gain"), 0.0};
      }
      p.static_paths.push_back(path);
    }
  } else if (p.sound_speed != kSoundSpeed) {
    p.static_paths = {default_direct_path(p.sound_speed)};
  }

  try {
    p.validate();
  } catch (const InvalidParameter& e) {
    throw SchemaError(e.what());
  }
  return p;
}

nlohmann::json scene_to_json(const SceneParams& p) {
  nlohmann::json j;
  j["geometry"] = p.geometry == ModelKind::planar2d ? "planar" : "spherical";
  j["num_scatterers"] = p.num_scatterers;
  j["seed"] = p.seed;
  j["duration"] = p.duration;
  if (p.speed_profile.size() == 1) {
    j["speed"] = p.speed_profile.front().speed;
  } else {
    for (const auto& s : p.speed_profile) j["speed_profile"].push_back({{"start", s.start}, {"speed", s.speed}});
  }
  j["snr_db"] = p.snr_db ? nlohmann::json(*p.snr_db) : nlohmann::json(nullptr);
  j["directions"] = to_string(p.directions);
  j["amplitudes"] = to_string(p.amplitudes);
  j["path_length"] = {p.path_length_min, p.path_length_max};
  j["dynamic_gain"] = p.dynamic_gain;
  j["sound_speed"] = p.sound_speed;
  j["static_paths"] = nlohmann::json::array();
  for (const auto& s : p.static_paths) {
    j["static_paths"].push_back({{"delay", s.delay}, {"gain", {s.gain.real(), s.gain.imag()}}});
  }
  return j;
}

nlohmann::json load_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(path.string() + ": invalid JSON: " + e.what());
  }
}

SceneParams load_scene(const std::filesystem::path& path) { return scene_from_json(load_json_file(path)); }

}  // namespace diffspeed
