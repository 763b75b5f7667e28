#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace presencia {

// Whole seconds since the Unix epoch, UTC.
using Timestamp = std::int64_t;

// YYYY-MM-DDThh:mm:ssZ
std::string format_utc(Timestamp t);
// Accepts YYYY-MM-DDThh:mm:ssZ only; throws ParseError otherwise.
Timestamp parse_utc(std::string_view text);

}  // namespace presencia
