#include "diffspeed/cli/manifest.hpp"

#include "diffspeed/errors.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iterator>

namespace diffspeed::cli {

void to_json(nlohmann::json& j, const Invocation& inv) {
  j = nlohmann::json{{"command", inv.command},     {"modem", inv.modem},   {"estimator", inv.estimator},
                     {"params", inv.params},       {"inputs", inv.inputs}, {"outputs", inv.outputs}};
}

void from_json(const nlohmann::json& j, Invocation& inv) {
  if (!j.is_object() || !j.contains("command")) throw SchemaError("manifest: missing required field 'command'");
  inv.command = j.at("command").get<std::string>();
  for (auto [key, field] : {std::pair{"modem", &inv.modem}, std::pair{"estimator", &inv.estimator},
                            std::pair{"params", &inv.params}, std::pair{"inputs", &inv.inputs},
                            std::pair{"outputs", &inv.outputs}}) {
    *field = j.contains(key) ? j.at(key) : nlohmann::json::object();
  }
}

void to_json(nlohmann::json& j, const RunManifest& m) {
  j = nlohmann::json{{"invocation", m.invocation},
                     {"tool_version", m.tool_version},
                     {"created_utc", m.created_utc},
                     {"seed", m.seed},
                     {"input_digests", m.input_digests},
                     {"output_digests", m.output_digests},
                     {"report", m.report}};
}

void from_json(const nlohmann::json& j, RunManifest& m) {
  if (!j.is_object() || !j.contains("invocation")) throw SchemaError("manifest: missing required field 'invocation'");
  m.invocation = j.at("invocation").get<Invocation>();
  m.tool_version = j.value("tool_version", std::string{});
  m.created_utc = j.value("created_utc", std::string{});
  m.seed = j.value("seed", nlohmann::json());
  m.input_digests = j.value("input_digests", nlohmann::json::object());
  m.output_digests = j.value("output_digests", nlohmann::json::object());
  m.report = j.value("report", nlohmann::json::object());
}

std::filesystem::path manifest_path_for(const std::filesystem::path& artifact) {
  return std::filesystem::path(artifact.string() + ".manifest.json");
}

void write_manifest(const std::filesystem::path& path, const RunManifest& m) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << nlohmann::json(m).dump(2) << '\n';
  if (!os) throw IoError("write failed: " + path.string());
}

RunManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(path.string() + ": invalid JSON: " + e.what());
  }
  try {
    return j.get<RunManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::istreambuf_iterator<char> it(is), end; it != end; ++it) {
    h ^= static_cast<unsigned char>(*it);
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace diffspeed::cli
