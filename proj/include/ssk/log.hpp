#pragma once

#include <string_view>

namespace ssk {

enum class LogLevel { Debug, Info, Warn, Error, Off };

/// Process-wide threshold; messages below it are dropped. Defaults to Info.
void set_log_level(LogLevel level);
LogLevel log_level();

/// Writes "[level] message" to stderr.
void log(LogLevel level, std::string_view message);
inline void log_info(std::string_view m) { log(LogLevel::Info, m); }
inline void log_warn(std::string_view m) { log(LogLevel::Warn, m); }

}  // namespace ssk
