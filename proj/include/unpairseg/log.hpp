#pragma once

#include <iostream>
#include <sstream>
#include <string>

#include "unpairseg/errors.hpp"

namespace unpairseg::log {

enum class Level { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3, kOff = 4 };

inline Level& threshold() {
  static Level level = Level::kInfo;
  return level;
}

/// Accepts debug, info, warn, error, off.
inline void set_level(const std::string& name) {
  if (name == "debug") threshold() = Level::kDebug;
  else if (name == "info") threshold() = Level::kInfo;
  else if (name == "warn" || name == "warning") threshold() = Level::kWarn;
  else if (name == "error") threshold() = Level::kError;
  else if (name == "off") threshold() = Level::kOff;
  else throw InvalidConfigError("unknown log level: " + name);
}

template <typename... Args>
void write(Level level, const char* tag, const Args&... args) {
  if (level < threshold()) return;
  std::ostringstream line;
  line << '[' << tag << "] ";
  (line << ... << args);
  line << '\n';
  std::clog << line.str();
}

template <typename... Args>
void debug(const Args&... args) { write(Level::kDebug, "debug", args...); }
template <typename... Args>
void info(const Args&... args) { write(Level::kInfo, "info", args...); }
template <typename... Args>
void warn(const Args&... args) { write(Level::kWarn, "warn", args...); }
template <typename... Args>
void error(const Args&... args) { write(Level::kError, "error", args...); }

}  // namespace unpairseg::log
