#include "manifest.hpp"

#include <algorithm>

#include "nowcast/csv.hpp"
#include "nowcast/digest.hpp"

#ifndef NOWCAST_VERSION
#define NOWCAST_VERSION "0.0.0"
#endif

namespace nowcast::cli {

RunManifest::RunManifest(std::string command, std::vector<std::string> argv)
    : command_(std::move(command)), argv_(std::move(argv)), started_(std::chrono::steady_clock::now()) {}

void RunManifest::config(const std::filesystem::path& path) {
  configs_.push_back(path.string());
  input(path);
}

void RunManifest::input(const std::filesystem::path& path) { inputs_.emplace_back(path.string(), sha256_file(path)); }

void RunManifest::input_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() != "run_manifest.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) input(f);
}

void RunManifest::write(const std::filesystem::path& out_dir) const {
  nlohmann::ordered_json j;
  j["command"] = command_;
  j["tool_version"] = NOWCAST_VERSION;
  j["argv"] = argv_;
  j["config_paths"] = configs_;
  j["seeds"] = seeds_;
  j["flags"] = flags_;
  auto& in = j["inputs"] = nlohmann::ordered_json::array();
  for (const auto& [path, digest] : inputs_) in.push_back({{"path", path}, {"sha256", digest}});
  auto& out = j["outputs"] = nlohmann::ordered_json::array();
  for (const auto& rel : outputs_) out.push_back({{"path", rel}, {"sha256", sha256_file(out_dir / rel)}});
  j["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
  write_text_file(out_dir / "run_manifest.json", j.dump(2) + "\n");
}

}  // namespace nowcast::cli
