#include "nowcast/log.hpp"

#include <cstdlib>

#include <spdlog/sinks/stdout_color_sinks.h>

namespace nowcast {

spdlog::logger& log() {
  static std::shared_ptr<spdlog::logger> instance = [] {
    auto logger = spdlog::stderr_color_mt("nowcast");
    logger->set_pattern("[%l] %v");
    auto level = spdlog::level::warn;
    if (const char* env = std::getenv("NOWCAST_LOG")) level = spdlog::level::from_str(env);
    logger->set_level(level);
    return logger;
  }();
  return *instance;
}

}  // namespace nowcast
