#include "afm/util/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace afm::util {
namespace {
std::atomic<int> g_level{static_cast<int>(LogLevel::kInfo)};
std::mutex g_mutex;
}  // namespace

void set_log_level(LogLevel level) { g_level = static_cast<int>(level); }

void log_info(std::string_view message) {
  if (g_level < static_cast<int>(LogLevel::kInfo)) return;
  std::lock_guard lock(g_mutex);
  std::clog << "[afm] " << message << '\n';
}

void log_warn(std::string_view message) {
  if (g_level < static_cast<int>(LogLevel::kWarn)) return;
  std::lock_guard lock(g_mutex);
  std::clog << "[afm] warning: " << message << '\n';
}

}  // namespace afm::util
