#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace pivotmt::cli {

std::string file_hash(const std::filesystem::path& path);

struct ArtifactRecord {
  std::string path;  // relative to the run directory
  std::string role;
  std::string hash;
  std::string stage;
};

// Record of every file a run wrote, plus stage timings and recipe results.
// Stored as manifest.json in the run directory and rewritten after every
// change.
class Manifest {
 public:
  explicit Manifest(std::filesystem::path run_dir);

  const std::filesystem::path& run_dir() const noexcept { return dir_; }

  // Hashes the file and records (or replaces) its entry.
  void record(const std::string& relative_path, const std::string& role, const std::string& stage);
  // True when every listed file exists with its recorded hash.
  bool intact(const std::vector<std::string>& relative_paths) const;
  // Throws IoError naming the first missing or altered artifact.
  void verify() const;

  const std::map<std::string, ArtifactRecord>& artifacts() const noexcept { return artifacts_; }

  void set_stage_seconds(const std::string& stage, double seconds);
  std::optional<double> stage_seconds(const std::string& stage) const;

  nlohmann::json& results() noexcept { return results_; }
  nlohmann::json& meta() noexcept { return meta_; }

  void save() const;

 private:
  std::filesystem::path dir_;
  std::map<std::string, ArtifactRecord> artifacts_;
  std::map<std::string, double> stage_seconds_;
  nlohmann::json results_ = nlohmann::json::object();
  nlohmann::json meta_ = nlohmann::json::object();
};

}  // namespace pivotmt::cli
