#pragma once

// Run manifest: every command records its resolved configuration, input
// digests, seed, and version so a run can be reproduced exactly. Timings
// are informational and excluded from reproducibility comparisons.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "delaycast/version.hpp"

namespace delaycast {

// 64-bit FNV-1a over a byte range.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 14695981039346656037ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string digest_hex(std::uint64_t h) {
  static const char* hex = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = hex[h & 0xF];
    h >>= 4;
  }
  return out;
}

inline std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::uint64_t h = 14695981039346656037ULL;
  char buf[65536];
  while (in.read(buf, sizeof buf) || in.gcount() > 0)
    h = fnv1a(buf, static_cast<std::size_t>(in.gcount()), h);
  return digest_hex(h);
}

struct RunManifest {
  std::string command;
  std::string tool_version = kVersion;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();     // resolved flag values
  std::vector<std::pair<std::string, std::string>> inputs;   // path, digest
  std::vector<std::pair<std::string, double>> timings_ms;

  void add_input(const std::string& path) { inputs.emplace_back(path, file_digest(path)); }
};

inline nlohmann::json manifest_to_json(const RunManifest& m) {
  nlohmann::json j;
  j["command"] = m.command;
  j["tool_version"] = m.tool_version;
  j["seed"] = m.seed;
  j["config"] = m.config;
  j["inputs"] = nlohmann::json::array();
  for (const auto& [path, digest] : m.inputs)
    j["inputs"].push_back({{"path", path}, {"digest", digest}});
  j["timings_ms"] = nlohmann::json::object();
  for (const auto& [name, ms] : m.timings_ms) j["timings_ms"][name] = ms;
  return j;
}

inline void write_manifest(const std::string& path, const RunManifest& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << manifest_to_json(m).dump(2) << '\n';
}

// Path of the manifest that accompanies an output file: the last extension
// is replaced so `dir/triangle.json` pairs with `dir/triangle.manifest.json`.
inline std::string manifest_path_for(const std::string& out_path) {
  const std::size_t slash = out_path.find_last_of("/\\");
  const std::size_t dot = out_path.find_last_of('.');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash))
    return out_path + ".manifest.json";
  return out_path.substr(0, dot) + ".manifest.json";
}

}  // namespace delaycast
