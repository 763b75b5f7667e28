#include "presencia/timeutil.hpp"

#include <cstdio>
#include <ctime>

#include "presencia/error.hpp"

namespace presencia {

std::string format_utc(Timestamp t) {
  const std::time_t tt = static_cast<std::time_t>(t);
  std::tm tm{};
  if (!::gmtime_r(&tt, &tm)) throw Error(ErrorCode::InvariantViolation, "timestamp out of range");
  if (tm.tm_year + 1900 < 0 || tm.tm_year + 1900 > 9999) {
    throw Error(ErrorCode::InvariantViolation, "timestamp outside years 0000-9999");
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
  return buf;
}

Timestamp parse_utc(std::string_view text) {
  std::tm tm{};
  int used = 0;
  const std::string s(text);
  if (s.size() != 20 ||
      std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%2dZ%n", &tm.tm_year, &tm.tm_mon, &tm.tm_mday, &tm.tm_hour,
                  &tm.tm_min, &tm.tm_sec, &used) != 6 ||
      used != 20) {
    throw Error(ErrorCode::ParseError, "expected YYYY-MM-DDThh:mm:ssZ, got '" + s + "'");
  }
  tm.tm_year -= 1900;
  tm.tm_mon -= 1;
  const Timestamp t = ::timegm(&tm);
  if (format_utc(t) != s) {
    throw Error(ErrorCode::ParseError, "invalid calendar time '" + s + "'");
  }
  return t;
}

}  // namespace presencia
