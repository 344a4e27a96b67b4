#include "fsed/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string_view>

namespace fsed {
namespace {

LogLevel from_env() {
  const char* env = std::getenv("FSED_LOG");
  if (env == nullptr) return LogLevel::warn;
  const std::string_view v(env);
  if (v == "quiet") return LogLevel::quiet;
  if (v == "error") return LogLevel::error;
  if (v == "info") return LogLevel::info;
  if (v == "debug") return LogLevel::debug;
  return LogLevel::warn;
}

std::atomic<LogLevel>& threshold() {
  static std::atomic<LogLevel> level{from_env()};
  return level;
}

}  // namespace

LogLevel log_threshold() { return threshold().load(std::memory_order_relaxed); }
void set_log_threshold(LogLevel level) { threshold().store(level, std::memory_order_relaxed); }

void log_line(LogLevel level, const std::string& message) {
  static std::mutex m;
  static constexpr std::string_view tags[] = {"", "error", "warn", "info", "debug"};
  std::lock_guard lock(m);
  std::cerr << "[" << tags[static_cast<int>(level)] << "] " << message << '\n';
}

}  // namespace fsed
