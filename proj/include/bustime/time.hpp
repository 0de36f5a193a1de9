#pragma once

// Civil-time helpers. Timestamps are local wall-clock times without a zone;
// they are stored as seconds since 1970-01-01T00:00:00 of that wall clock.

#include <chrono>
#include <cmath>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>

namespace bustime {

struct Instant {
  double seconds{0.0};

  friend auto operator<=>(const Instant&, const Instant&) = default;

  Instant operator+(double s) const { return Instant{seconds + s}; }
  double operator-(Instant other) const { return seconds - other.seconds; }
};

inline double minutes_between(Instant from, Instant to) {
  return (to.seconds - from.seconds) / 60.0;
}

struct CivilDate {
  int year{1970};
  unsigned month{1};
  unsigned day{1};

  friend auto operator<=>(const CivilDate&, const CivilDate&) = default;
};

inline std::int64_t days_from_civil(const CivilDate& d) {
  using namespace std::chrono;
  const year_month_day ymd{year{d.year}, month{d.month}, day{d.day}};
  if (!ymd.ok()) throw std::invalid_argument("invalid calendar date");
  return sys_days{ymd}.time_since_epoch().count();
}

inline CivilDate civil_from_days(std::int64_t days) {
  using namespace std::chrono;
  const year_month_day ymd{sys_days{std::chrono::days{days}}};
  return CivilDate{static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                   static_cast<unsigned>(ymd.day())};
}

inline std::int64_t day_number(Instant t) {
  return static_cast<std::int64_t>(std::floor(t.seconds / 86400.0));
}

inline CivilDate date_of(Instant t) { return civil_from_days(day_number(t)); }

inline Instant midnight_of(const CivilDate& d) {
  return Instant{static_cast<double>(days_from_civil(d)) * 86400.0};
}

/// Hours since local midnight, in [0, 24).
inline double hour_of_day(Instant t) {
  const double s = t.seconds - static_cast<double>(day_number(t)) * 86400.0;
  return s / 3600.0;
}

/// 0 = Sunday ... 6 = Saturday.
inline unsigned weekday_of(Instant t) {
  using namespace std::chrono;
  return weekday{sys_days{std::chrono::days{day_number(t)}}}.c_encoding();
}

inline bool is_weekend(Instant t) {
  const unsigned wd = weekday_of(t);
  return wd == 0 || wd == 6;
}

inline CivilDate parse_date(std::string_view text) {
  int y = 0;
  unsigned m = 0, d = 0;
  char tail = 0;
  const std::string s(text);
  if (std::sscanf(s.c_str(), "%d-%u-%u%c", &y, &m, &d, &tail) != 3)
    throw std::invalid_argument("bad date '" + s + "' (want YYYY-MM-DD)");
  CivilDate out{y, m, d};
  days_from_civil(out);
  return out;
}

/// Accepts YYYY-MM-DDTHH:MM:SS or YYYY-MM-DD HH:MM:SS.
inline Instant parse_instant(std::string_view text) {
  int y = 0;
  unsigned mo = 0, d = 0, h = 0, mi = 0, se = 0;
  char sep = 0, tail = 0;
  const std::string s(text);
  const int n = std::sscanf(s.c_str(), "%d-%u-%u%c%u:%u:%u%c", &y, &mo, &d, &sep, &h, &mi,
                            &se, &tail);
  if (n != 7 || (sep != 'T' && sep != ' ') || h > 23 || mi > 59 || se > 60)
    throw std::invalid_argument("bad timestamp '" + s + "'");
  const auto days = days_from_civil(CivilDate{y, mo, d});
  return Instant{static_cast<double>(days) * 86400.0 + h * 3600.0 + mi * 60.0 + se};
}

inline std::string format_date(const CivilDate& d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", d.year, d.month, d.day);
  return buf;
}

/// Rounds to the nearest second.
inline std::string format_instant(Instant t) {
  const auto total = static_cast<std::int64_t>(std::llround(t.seconds));
  const std::int64_t days = total >= 0 ? total / 86400 : -((-total + 86399) / 86400);
  const std::int64_t rem = total - days * 86400;
  const CivilDate d = civil_from_days(days);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d", d.year, d.month, d.day,
                static_cast<int>(rem / 3600), static_cast<int>((rem / 60) % 60),
                static_cast<int>(rem % 60));
  return buf;
}

}  // namespace bustime
