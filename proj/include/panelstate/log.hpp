#pragma once

#include <cstdlib>
#include <memory>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace panelstate {

// Shared stderr logger. The level comes from PANELSTATE_LOG
// (trace, debug, info, warn, error, off); default is warn.
inline spdlog::logger& logger() {
  static std::shared_ptr<spdlog::logger> instance = [] {
    auto l = spdlog::stderr_color_mt("panelstate");
    spdlog::level::level_enum level = spdlog::level::warn;
    if (const char* env = std::getenv("PANELSTATE_LOG")) {
      level = spdlog::level::from_str(env);
    }
    l->set_level(level);
    l->set_pattern("[%l] %v");
    return l;
  }();
  return *instance;
}

}  // namespace panelstate
