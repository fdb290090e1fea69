#include "pivotmt/cli/manifest.hpp"

#include <fstream>
#include <sstream>

#include "pivotmt/error.hpp"
#include "pivotmt/hash.hpp"

namespace pivotmt::cli {

namespace fs = std::filesystem;

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  Fnv1a h;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

Manifest::Manifest(fs::path run_dir) : dir_(std::move(run_dir)) {
  fs::create_directories(dir_);
  const auto path = dir_ / "manifest.json";
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": malformed manifest: " + e.what());
  }
  for (const auto& a : j.value("artifacts", nlohmann::json::array())) {
    ArtifactRecord r{a.at("path"), a.at("role"), a.at("hash"), a.at("stage")};
    artifacts_[r.path] = r;
  }
  stage_seconds_ = j.value("stage_seconds", std::map<std::string, double>{});
  results_ = j.value("results", nlohmann::json::object());
  meta_ = j.value("meta", nlohmann::json::object());
}

void Manifest::record(const std::string& relative_path, const std::string& role, const std::string& stage) {
  artifacts_[relative_path] = {relative_path, role, file_hash(dir_ / relative_path), stage};
}

bool Manifest::intact(const std::vector<std::string>& relative_paths) const {
  for (const auto& p : relative_paths) {
    const auto it = artifacts_.find(p);
    if (it == artifacts_.end() || !fs::exists(dir_ / p)) return false;
    if (file_hash(dir_ / p) != it->second.hash) return false;
  }
  return true;
}

void Manifest::verify() const {
  for (const auto& [path, rec] : artifacts_) {
    if (!fs::exists(dir_ / path)) throw IoError("manifest: artifact " + path + " is missing");
    const auto actual = file_hash(dir_ / path);
    if (actual != rec.hash) {
      throw IoError("manifest: artifact " + path + " has hash " + actual + ", recorded " + rec.hash);
    }
  }
}

void Manifest::set_stage_seconds(const std::string& stage, double seconds) { stage_seconds_[stage] = seconds; }

std::optional<double> Manifest::stage_seconds(const std::string& stage) const {
  const auto it = stage_seconds_.find(stage);
  if (it == stage_seconds_.end()) return std::nullopt;
  return it->second;
}

void Manifest::save() const {
  nlohmann::json j;
  auto arr = nlohmann::json::array();
  for (const auto& [path, r] : artifacts_) {
    arr.push_back({{"path", r.path}, {"role", r.role}, {"hash", r.hash}, {"stage", r.stage}});
  }
  j["artifacts"] = arr;
  j["stage_seconds"] = stage_seconds_;
  j["results"] = results_;
  j["meta"] = meta_;
  const auto path = dir_ / "manifest.json";
  const auto tmp = dir_ / "manifest.json.tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << j.dump(2) << "\n";
  }
  fs::rename(tmp, path);
}

}  // namespace pivotmt::cli
