#pragma once

#include <atomic>
#include <iostream>
#include <mutex>
#include <string_view>

namespace caps2ne {

enum class LogLevel { quiet = 0, warning = 1, info = 2 };

inline std::atomic<LogLevel>& log_level() {
  static std::atomic<LogLevel> level{LogLevel::warning};
  return level;
}

inline void log_message(LogLevel level, std::string_view tag, std::string_view msg) {
  if (static_cast<int>(level) > static_cast<int>(log_level().load())) return;
  static std::mutex mutex;
  std::lock_guard lock(mutex);
  std::cerr << "[caps2ne] " << tag << ": " << msg << '\n';
}

inline void log_warning(std::string_view msg) { log_message(LogLevel::warning, "warning", msg); }
inline void log_info(std::string_view msg) { log_message(LogLevel::info, "info", msg); }

}  // namespace caps2ne
