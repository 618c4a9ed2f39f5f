#pragma once

#include <ostream>
#include <string>

namespace dydiff {

// Warnings go to std::cerr unless redirected; nullptr silences them.
void set_warning_stream(std::ostream* out);
void warn(const std::string& message);

}  // namespace dydiff
