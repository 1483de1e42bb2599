#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace nowcast::cli {

/// SHA-1 of "blob <size>\0<content>", as printed by `git hash-object`.
std::string git_blob_sha1(const std::filesystem::path& file);

/// Record of one artifact-producing command, written as JSON next to its outputs.
class RunManifest {
 public:
  RunManifest(std::string command, std::vector<std::string> args);

  /// Effective settings after flags, config file and defaults were merged.
  nlohmann::json& config() { return json_["config"]; }
  nlohmann::json& timings() { return json_["timings"]; }
  void set_seed(std::uint64_t seed) { json_["seed"] = seed; }
  void add_input(const std::filesystem::path& file);
  void add_output(const std::filesystem::path& file);

  /// Stamps the total wall-clock time and writes the file.
  void write(const std::filesystem::path& file);

 private:
  nlohmann::json json_;
  std::chrono::steady_clock::time_point started_ = std::chrono::steady_clock::now();
};

}  // namespace nowcast::cli
