#pragma once

#include <json.hpp>

#include <filesystem>
#include <string>

namespace diffspeed::cli {

inline constexpr const char* kToolVersion = "0.1.0";

/**
 * Everything needed to re-run a command: the resolved modem / estimator
 * configuration, command parameters, and input / output paths.
 *
 *   {"command": ..., "modem": {...}, "estimator": {...}, "params": {...},
 *    "inputs": {name: path}, "outputs": {name: path}}
 */
struct Invocation {
  std::string command;
  nlohmann::json modem = nlohmann::json::object();
  nlohmann::json estimator = nlohmann::json::object();
  nlohmann::json params = nlohmann::json::object();
  nlohmann::json inputs = nlohmann::json::object();
  nlohmann::json outputs = nlohmann::json::object();
};

void to_json(nlohmann::json& j, const Invocation& inv);
void from_json(const nlohmann::json& j, Invocation& inv);

/// Sidecar written next to every output artifact.
struct RunManifest {
  Invocation invocation;
  std::string tool_version = kToolVersion;
  std::string created_utc;
  nlohmann::json seed;                         // null when not simulation-sourced
  nlohmann::json input_digests = nlohmann::json::object();
  nlohmann::json output_digests = nlohmann::json::object();
  nlohmann::json report = nlohmann::json::object();  // warnings and command-specific facts
};

void to_json(nlohmann::json& j, const RunManifest& m);
void from_json(const nlohmann::json& j, RunManifest& m);

std::filesystem::path manifest_path_for(const std::filesystem::path& artifact);
void write_manifest(const std::filesystem::path& path, const RunManifest& m);
RunManifest read_manifest(const std::filesystem::path& path);

/// FNV-1a 64-bit digest of a file's bytes, as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);
std::string utc_timestamp();

}  // namespace diffspeed::cli
