#pragma once

// Stderr logging gated by the CAW_LOG environment variable
// (error | warn | info | debug); default warn.

#include <cstdlib>
#include <iostream>
#include <string>

namespace caw {

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

inline LogLevel log_level() {
  static const LogLevel lvl = [] {
    const char* e = std::getenv("CAW_LOG");
    if (!e) return LogLevel::warn;
    const std::string s(e);
    if (s == "error") return LogLevel::error;
    if (s == "warn") return LogLevel::warn;
    if (s == "info") return LogLevel::info;
    if (s == "debug") return LogLevel::debug;
    return LogLevel::warn;
  }();
  return lvl;
}

inline void log(LogLevel lvl, const std::string& msg) {
  static const char* names[] = {"error", "warn", "info", "debug"};
  if (static_cast<int>(lvl) <= static_cast<int>(log_level()))
    std::cerr << "[caw:" << names[static_cast<int>(lvl)] << "] " << msg << "\n";
}

inline void log_error(const std::string& m) { log(LogLevel::error, m); }
inline void log_warn(const std::string& m) { log(LogLevel::warn, m); }
inline void log_info(const std::string& m) { log(LogLevel::info, m); }
inline void log_debug(const std::string& m) { log(LogLevel::debug, m); }

}  // namespace caw
