#pragma once

#include "diffspeed/simulator.hpp"

#include <json.hpp>

#include <filesystem>

namespace diffspeed {

/**
 * Scene file schema (JSON object):
 *
 *   required  geometry        "spherical" | "planar" (also "3d" / "2d")
 *             num_scatterers  integer >= 1
 *             seed            non-negative integer
 *             duration        s
 *             speed           m/s, or speed_profile: [{"start": s, "speed": m/s}, ...]
 *   optional  snr_db          dB, null for a noiseless scene (default 20)
 *             directions      "uniform" | "radial" | "tangential" | "uniform_symmetric"
 *             amplitudes      "rayleigh" | "constant"
 *             path_length     [min, max] in m (default [0.5, 3.5])
 *             dynamic_gain    default 1
 *             static_paths    [{"delay": s, "gain": number | [re, im]}, ...]
 *                             (default: one direct path, gain sqrt(10), 0.3 m)
 *             sound_speed     m/s
 *
 * Missing or mistyped fields raise SchemaError naming the field.
 */
SceneParams scene_from_json(const nlohmann::json& j);
nlohmann::json scene_to_json(const SceneParams& p);

SceneParams load_scene(const std::filesystem::path& path);

/// Parses a JSON file; IoError when unreadable, SchemaError when malformed.
nlohmann::json load_json_file(const std::filesystem::path& path);

}  // namespace diffspeed
