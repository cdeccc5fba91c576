#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace nowcast::cli {

// One run_manifest.json per command invocation.
class RunManifest {
 public:
  RunManifest(std::string command, std::vector<std::string> argv);

  void config(const std::filesystem::path& path);
  void seed(std::uint64_t seed) { seeds_.push_back(seed); }
  void flag(const std::string& name, const std::string& value) { flags_[name] = value; }
  void input(const std::filesystem::path& path);
  void input_dir(const std::filesystem::path& dir);
  /// Relative to the output directory.
  void output(const std::string& relative) { outputs_.push_back(relative); }

  void write(const std::filesystem::path& out_dir) const;

 private:
  std::string command_;
  std::vector<std::string> argv_;
  std::vector<std::string> configs_;
  std::vector<std::uint64_t> seeds_;
  nlohmann::ordered_json flags_ = nlohmann::ordered_json::object();
  std::vector<std::pair<std::string, std::string>> inputs_;
  std::vector<std::string> outputs_;
  std::chrono::steady_clock::time_point started_;
};

}  // namespace nowcast::cli
