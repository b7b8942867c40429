#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmrt/digest.hpp"
#include "cmrt/error.hpp"

namespace cmrt::run {

inline constexpr const char* kToolVersion = "cmrt 0.1.0";

/// Record of one CLI invocation. No timestamps or host data, so repeating
/// the same command reproduces the manifest byte for byte.
struct RunManifest {
  std::string command;
  std::vector<std::string> args;  // argv after the program name
  std::string config_path;
  nlohmann::json effective = nlohmann::json::object();  // every value the run used
  std::vector<std::uint64_t> seed_record;
  std::vector<std::filesystem::path> artifact_paths;
};

inline std::string file_sha256(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw Error(ErrorKind::io, "cannot read '" + p.string() + "' for hashing");
  std::ostringstream ss;
  ss << is.rdbuf();
  return sha256_hex(ss.str());
}

inline nlohmann::json to_json(const RunManifest& m) {
  nlohmann::json artifacts = nlohmann::json::array();
  for (const auto& p : m.artifact_paths) artifacts.push_back({{"path", p.string()}, {"sha256", file_sha256(p)}});
  nlohmann::json j = {{"tool_version", kToolVersion}, {"command", m.command},     {"args", m.args},
                      {"config_path", m.config_path}, {"effective", m.effective}, {"seed_record", m.seed_record},
                      {"artifacts", artifacts}};
  if (!m.config_path.empty()) j["config_sha256"] = file_sha256(m.config_path);
  return j;
}

inline void write_run_manifest(const std::filesystem::path& path, const RunManifest& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::io, "cannot write run manifest '" + path.string() + "'");
  os << to_json(m).dump(2) << '\n';
  if (!os) throw Error(ErrorKind::io, "failed writing run manifest '" + path.string() + "'");
}

}  // namespace cmrt::run
