#pragma once

#include <string_view>

namespace sfda {

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

// Minimal stderr logger. Default level is Warn; the CLI raises it to Info.
void set_log_level(LogLevel level);
LogLevel log_level();

void log_message(LogLevel level, std::string_view message);
inline void log_info(std::string_view message) { log_message(LogLevel::Info, message); }
inline void log_warn(std::string_view message) { log_message(LogLevel::Warn, message); }

}  // namespace sfda
