#pragma once

#include <string>
#include <vector>

namespace dydiff {

// Shortest round-trip decimal form; "nan"/"inf"/"-inf" for non-finite values.
std::string csv_number(double v);
std::string csv_join(const std::vector<std::string>& fields);

}  // namespace dydiff
