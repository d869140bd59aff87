#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <string_view>

namespace snowwatch {

using Timestamp = std::chrono::sys_seconds;

// Accepts "YYYY-MM-DDTHH:MM:SS[Z]", "YYYY-MM-DD HH:MM:SS", "YYYY:MM:DD HH:MM:SS"
// (EXIF) and a bare "YYYY-MM-DD" (midnight UTC).
std::optional<Timestamp> parse_timestamp(std::string_view text);

// "YYYY-MM-DDTHH:MM:SSZ"
std::string format_timestamp(Timestamp t);

// "YYYY-MM-DD" of the UTC day containing t.
std::string format_date(Timestamp t);

inline std::chrono::sys_days utc_day(Timestamp t) {
  return std::chrono::floor<std::chrono::days>(t);
}

inline Timestamp now_seconds() {
  return std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
}

}  // namespace snowwatch
