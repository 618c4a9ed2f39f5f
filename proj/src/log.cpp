#include "dydiff/log.hpp"

#include <iostream>
#include <mutex>

namespace dydiff {

namespace {
std::ostream* g_stream = &std::cerr;
std::mutex g_mutex;
}  // namespace

void set_warning_stream(std::ostream* out) {
  std::lock_guard lock(g_mutex);
  g_stream = out;
}

void warn(const std::string& message) {
  std::lock_guard lock(g_mutex);
  if (g_stream) *g_stream << "warning: " << message << '\n';
}

}  // namespace dydiff
