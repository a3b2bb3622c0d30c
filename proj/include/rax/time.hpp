#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace rax {

// Event timestamps are seconds since the Unix epoch. Source times are
// local-naive and are stored as if they were UTC.
struct CivilTime {
  int year = 1970;
  int month = 1;
  int day = 1;
  int hour = 0;
  int minute = 0;
  int second = 0;
  int weekday = 3;  // Monday = 0 ... Sunday = 6
};

std::int64_t make_timestamp(int year, int month, int day, int hour = 0, int minute = 0,
                            int second = 0);
CivilTime to_civil(std::int64_t timestamp);

// First second of the given month.
std::int64_t month_start(int year, int month);
// First second of the month after the given one.
std::int64_t month_end(int year, int month);

// Accepts "YYYY-MM-DD", "YYYY-MM-DDTHH:MM[:SS[.fff]]", "YYYY-MM-DD HH:MM[:SS]"
// and "MM/DD/YYYY". The optional time column accepts "H:MM[:SS]".
std::optional<std::int64_t> parse_timestamp(std::string_view date, std::string_view time = {});

std::string format_timestamp(std::int64_t timestamp);  // "YYYY-MM-DDTHH:MM:SS"

}  // namespace rax
