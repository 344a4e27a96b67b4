#pragma once

#include <sstream>
#include <string>

namespace fsed {

enum class LogLevel { quiet = 0, error = 1, warn = 2, info = 3, debug = 4 };

/// Threshold from FSED_LOG (quiet|error|warn|info|debug), default warn.
LogLevel log_threshold();
void set_log_threshold(LogLevel level);
void log_line(LogLevel level, const std::string& message);

template <typename... Args>
void log(LogLevel level, const Args&... args) {
  if (level > log_threshold()) return;
  std::ostringstream s;
  (s << ... << args);
  log_line(level, s.str());
}

}  // namespace fsed
