#pragma once

// Command-line front end: generate, train, eval, sweep and plot. Every
// command except plot also writes a run manifest listing the produced
// files with their SHA-256 checksums.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace dhh::cli {

inline constexpr std::string_view kToolVersion = "0.1.0";

// Environment variable naming the default output directory.
inline constexpr const char* kOutDirVariable = "DHH_OUT_DIR";

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

struct ManifestEntry {
  std::string path;
  std::string sha256;
};

struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json seeds = nlohmann::json::object();
  std::vector<ManifestEntry> inputs;
  std::vector<ManifestEntry> outputs;
};

nlohmann::json to_json(const RunManifest& manifest);
// Checksums the files now; paths are recorded as given.
ManifestEntry file_entry(const std::filesystem::path& path);

// Writes text atomically enough for our purposes and returns its manifest entry.
ManifestEntry write_text(const std::filesystem::path& path, std::string_view text);

// Parses and runs one command line (args excludes the program name). Returns
// the process exit code: 0 on success, 1 on runtime errors, 2 on usage errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dhh::cli
