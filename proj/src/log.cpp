#include "ssk/log.hpp"

#include <atomic>
#include <iostream>

namespace ssk {
namespace {

std::atomic<LogLevel> g_level{LogLevel::Info};

const char* tag(LogLevel l) {
  switch (l) {
    case LogLevel::Debug: return "debug";
    case LogLevel::Info: return "info";
    case LogLevel::Warn: return "warn";
    case LogLevel::Error: return "error";
    case LogLevel::Off: break;
  }
  return "";
}

}  // namespace

void set_log_level(LogLevel level) { g_level = level; }
LogLevel log_level() { return g_level; }

void log(LogLevel level, std::string_view message) {
  if (level < g_level.load() || level == LogLevel::Off) return;
  std::cerr << '[' << tag(level) << "] " << message << '\n';
}

}  // namespace ssk
