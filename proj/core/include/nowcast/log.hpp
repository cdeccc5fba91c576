#pragma once

#include <memory>

#include <spdlog/spdlog.h>

namespace nowcast {

/// Shared "nowcast" logger writing to stderr. Level comes from the
/// NOWCAST_LOG environment variable (trace, debug, info, warn, error, off);
/// default warn.
spdlog::logger& log();

}  // namespace nowcast
