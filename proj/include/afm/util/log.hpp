#pragma once

#include <string_view>

namespace afm::util {

enum class LogLevel { kQuiet = 0, kWarn = 1, kInfo = 2 };

void set_log_level(LogLevel level);
void log_info(std::string_view message);
void log_warn(std::string_view message);

}  // namespace afm::util
