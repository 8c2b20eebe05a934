#pragma once

#include <charconv>
#include <cmath>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

namespace pmuvar {

using Timestamp = std::chrono::sys_time<std::chrono::nanoseconds>;

namespace detail {

inline bool parse_fixed_int(std::string_view s, std::size_t pos, std::size_t len, int& out) {
  if (pos + len > s.size()) return false;
  int value = 0;
  for (std::size_t i = pos; i < pos + len; ++i) {
    char c = s[i];
    if (c < '0' || c > '9') return false;
    value = value * 10 + (c - '0');
  }
  out = value;
  return true;
}

}  // namespace detail

// Parses "YYYY-MM-DDTHH:MM:SS[.fffffffff](Z|+00:00)". Only UTC is accepted.
inline std::optional<Timestamp> parse_iso8601(std::string_view s) {
  using namespace std::chrono;
  int y, mo, d, h, mi, se;
  if (!detail::parse_fixed_int(s, 0, 4, y) || s.size() < 19 || s[4] != '-' ||
      !detail::parse_fixed_int(s, 5, 2, mo) || s[7] != '-' ||
      !detail::parse_fixed_int(s, 8, 2, d) || (s[10] != 'T' && s[10] != ' ') ||
      !detail::parse_fixed_int(s, 11, 2, h) || s[13] != ':' ||
      !detail::parse_fixed_int(s, 14, 2, mi) || s[16] != ':' ||
      !detail::parse_fixed_int(s, 17, 2, se)) {
    return std::nullopt;
  }
  year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || se > 59) return std::nullopt;

  std::size_t pos = 19;
  std::int64_t frac_ns = 0;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    std::size_t digits = 0;
    std::int64_t scale = 100000000;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
      if (digits >= 9) return std::nullopt;
      frac_ns += (s[pos] - '0') * scale;
      scale /= 10;
      ++digits;
      ++pos;
    }
    if (digits == 0) return std::nullopt;
  }
  std::string_view zone = s.substr(pos);
  if (zone != "Z" && zone != "+00:00" && !zone.empty()) return std::nullopt;

  auto t = sys_days{ymd} + hours{h} + minutes{mi} + seconds{se};
  return Timestamp{duration_cast<nanoseconds>(t.time_since_epoch()) + nanoseconds{frac_ns}};
}

// Formats with 3, 6 or 9 fractional digits (the fewest that are exact).
inline std::string format_iso8601(Timestamp t) {
  using namespace std::chrono;
  auto day_point = floor<days>(t);
  year_month_day ymd{day_point};
  auto since_midnight = t - day_point;
  auto h = duration_cast<hours>(since_midnight);
  auto mi = duration_cast<minutes>(since_midnight - h);
  auto se = duration_cast<seconds>(since_midnight - h - mi);
  auto ns = (since_midnight - h - mi - se).count();

  char buf[48];
  int n = std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d", static_cast<int>(ymd.year()),
                        static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                        static_cast<int>(h.count()), static_cast<int>(mi.count()),
                        static_cast<int>(se.count()));
  std::string out(buf, static_cast<std::size_t>(n));
  if (ns != 0) {
    char frac[16];
    if (ns % 1000000 == 0) {
      std::snprintf(frac, sizeof frac, ".%03lld", static_cast<long long>(ns / 1000000));
    } else if (ns % 1000 == 0) {
      std::snprintf(frac, sizeof frac, ".%06lld", static_cast<long long>(ns / 1000));
    } else {
      std::snprintf(frac, sizeof frac, ".%09lld", static_cast<long long>(ns));
    }
    out += frac;
  }
  out += 'Z';
  return out;
}

inline Timestamp timestamp_from_seconds(double seconds_since_epoch) {
  return Timestamp{std::chrono::nanoseconds{static_cast<std::int64_t>(std::llround(seconds_since_epoch * 1e9))}};
}

inline double seconds_between(Timestamp a, Timestamp b) {
  return std::chrono::duration<double>(b - a).count();
}

// Shortest decimal text that parses back to the identical double.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace pmuvar
