#pragma once

// Calendar dates and epidemiological-week indexing.
//
// Dates are plain day counts since 1970-01-01 (proleptic Gregorian).
// Epidemiological weeks are seven-day bins aligned to a configurable
// week-start day (Sunday by default, the Brazilian surveillance
// convention). Week indices are consecutive integers, so the delay of a
// record in week units is simply week(report) - week(event).

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace delaycast {

namespace detail {

// Howard Hinnant's days-from-civil algorithm.
inline std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                       static_cast<unsigned>(d) - 1u;
  const unsigned doe = yoe * 365u + yoe / 4u - yoe / 100u + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  m = static_cast<int>(mp < 10 ? mp + 3 : mp - 9);
  y = static_cast<int>(yy + (m <= 2));
}

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

inline bool is_leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

inline int days_in_month(int y, int m) {
  static const int len[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  if (m == 2 && is_leap(y)) return 29;
  return len[m - 1];
}

}  // namespace detail

struct Date {
  std::int64_t days = 0;  // days since 1970-01-01

  Date() = default;
  explicit Date(std::int64_t epoch_days) : days(epoch_days) {}
  Date(int y, int m, int d) : days(detail::days_from_civil(y, m, d)) {}

  // Strict YYYY-MM-DD.
  static Date parse_iso(const std::string& s) {
    auto fail = [&]() -> Date {
      throw std::invalid_argument("invalid ISO date '" + s + "' (expected YYYY-MM-DD)");
    };
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return fail();
    for (int i : {0, 1, 2, 3, 5, 6, 8, 9})
      if (s[i] < '0' || s[i] > '9') return fail();
    const int y = std::stoi(s.substr(0, 4));
    const int m = std::stoi(s.substr(5, 2));
    const int d = std::stoi(s.substr(8, 2));
    if (m < 1 || m > 12 || d < 1 || d > detail::days_in_month(y, m)) return fail();
    return Date(y, m, d);
  }

  std::string iso() const {
    int y, m, d;
    detail::civil_from_days(days, y, m, d);
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", y, m, d);
    return buf;
  }

  Date plus_days(std::int64_t n) const { return Date(days + n); }

  auto operator<=>(const Date&) const = default;
};

// 0 = Sunday ... 6 = Saturday.
enum class Weekday : int {
  sunday = 0,
  monday = 1,
  tuesday = 2,
  wednesday = 3,
  thursday = 4,
  friday = 5,
  saturday = 6,
};

inline Weekday weekday_of(Date date) {
  // 1970-01-01 was a Thursday.
  return static_cast<Weekday>(((date.days % 7) + 7 + 4) % 7);
}

// Consecutive index of the week containing `date`, for weeks starting on
// `week_start`. Differences of indices give delays in whole weeks.
inline std::int64_t epiweek_index(Date date, Weekday week_start = Weekday::sunday) {
  return detail::floor_div(date.days + 4 - static_cast<int>(week_start), 7);
}

// First day of the week with the given index.
inline Date epiweek_start(std::int64_t week_index, Weekday week_start = Weekday::sunday) {
  return Date(week_index * 7 - 4 + static_cast<int>(week_start));
}

inline Weekday parse_weekday(const std::string& s) {
  static const char* names[7] = {"sunday",   "monday", "tuesday", "wednesday",
                                 "thursday", "friday", "saturday"};
  std::string lower;
  lower.reserve(s.size());
  for (char ch : s) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  for (int i = 0; i < 7; ++i)
    if (lower == names[i]) return static_cast<Weekday>(i);
  throw std::invalid_argument("unknown weekday '" + s + "'");
}

inline const char* weekday_name(Weekday w) {
  static const char* names[7] = {"sunday",   "monday", "tuesday", "wednesday",
                                 "thursday", "friday", "saturday"};
  return names[static_cast<int>(w)];
}

}  // namespace delaycast
