#include "rax/time.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>

namespace rax {

namespace {

using std::chrono::days;
using std::chrono::sys_days;

bool parse_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool valid_date(int y, int m, int d) {
  using namespace std::chrono;
  return year_month_day{year{y}, month{static_cast<unsigned>(m)}, day{static_cast<unsigned>(d)}}
      .ok();
}

// "H:MM", "HH:MM", "HH:MM:SS", "HH:MM:SS.fff"
bool parse_clock(std::string_view s, int& hh, int& mm, int& ss) {
  s = trim(s);
  hh = mm = ss = 0;
  if (s.empty()) return true;
  auto c1 = s.find(':');
  if (c1 == std::string_view::npos) return false;
  if (!parse_int(s.substr(0, c1), hh)) return false;
  auto rest = s.substr(c1 + 1);
  auto c2 = rest.find(':');
  if (c2 == std::string_view::npos) {
    if (!parse_int(rest, mm)) return false;
  } else {
    if (!parse_int(rest.substr(0, c2), mm)) return false;
    auto sec = rest.substr(c2 + 1);
    if (auto dot = sec.find('.'); dot != std::string_view::npos) sec = sec.substr(0, dot);
    if (!parse_int(sec, ss)) return false;
  }
  return hh >= 0 && hh <= 23 && mm >= 0 && mm <= 59 && ss >= 0 && ss <= 60;
}

}  // namespace

std::int64_t make_timestamp(int year, int month, int day, int hour, int minute, int second) {
  using namespace std::chrono;
  const sys_days d{std::chrono::year{year} / static_cast<unsigned>(month) / static_cast<unsigned>(day)};
  return static_cast<std::int64_t>(d.time_since_epoch().count()) * 86400 + hour * 3600 +
         minute * 60 + second;
}

CivilTime to_civil(std::int64_t timestamp) {
  using namespace std::chrono;
  std::int64_t day_index = timestamp / 86400;
  std::int64_t secs = timestamp % 86400;
  if (secs < 0) {
    secs += 86400;
    --day_index;
  }
  const sys_days d{days{day_index}};
  const year_month_day ymd{d};
  CivilTime c;
  c.year = static_cast<int>(ymd.year());
  c.month = static_cast<int>(static_cast<unsigned>(ymd.month()));
  c.day = static_cast<int>(static_cast<unsigned>(ymd.day()));
  c.hour = static_cast<int>(secs / 3600);
  c.minute = static_cast<int>((secs % 3600) / 60);
  c.second = static_cast<int>(secs % 60);
  c.weekday = static_cast<int>(weekday{d}.iso_encoding()) - 1;
  return c;
}

std::int64_t month_start(int year, int month) { return make_timestamp(year, month, 1); }

std::int64_t month_end(int year, int month) {
  return month == 12 ? make_timestamp(year + 1, 1, 1) : make_timestamp(year, month + 1, 1);
}

std::optional<std::int64_t> parse_timestamp(std::string_view date, std::string_view time) {
  date = trim(date);
  int y = 0, m = 0, d = 0;
  std::string_view clock = time;
  if (date.size() >= 10 && date[4] == '-' && date[7] == '-') {
    if (!parse_int(date.substr(0, 4), y) || !parse_int(date.substr(5, 2), m) ||
        !parse_int(date.substr(8, 2), d)) {
      return std::nullopt;
    }
    if (date.size() > 10) {
      if (date[10] != 'T' && date[10] != ' ') return std::nullopt;
      auto embedded = date.substr(11);
      if (!time.empty() && !trim(embedded).empty() && trim(embedded) != "00:00:00.000" &&
          trim(embedded) != "00:00:00") {
        return std::nullopt;  // both an embedded and a separate time
      }
      if (time.empty()) clock = embedded;
    }
  } else {
    auto s1 = date.find('/');
    auto s2 = date.rfind('/');
    if (s1 == std::string_view::npos || s2 == s1) return std::nullopt;
    auto ypart = date.substr(s2 + 1);
    if (auto sp = ypart.find(' '); sp != std::string_view::npos) {
      if (time.empty()) clock = ypart.substr(sp + 1);
      ypart = ypart.substr(0, sp);
    }
    if (!parse_int(date.substr(0, s1), m) || !parse_int(date.substr(s1 + 1, s2 - s1 - 1), d) ||
        !parse_int(ypart, y)) {
      return std::nullopt;
    }
  }
  if (y < 1900 || y > 2200 || !valid_date(y, m, d)) return std::nullopt;
  int hh, mm, ss;
  if (!parse_clock(clock, hh, mm, ss)) return std::nullopt;
  return make_timestamp(y, m, d, hh, mm, 0);
}

std::string format_timestamp(std::int64_t timestamp) {
  const auto c = to_civil(timestamp);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d", c.year, c.month, c.day, c.hour,
                c.minute, c.second);
  return buf;
}

}  // namespace rax
