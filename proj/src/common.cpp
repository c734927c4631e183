#include "gridobs/common.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>

namespace gridobs {

namespace {

using std::chrono::days;
using std::chrono::hours;
using std::chrono::sys_days;

sys_days day_of(HourStamp stamp) {
  // floor division so negative stamps land on the right day
  HourStamp d = stamp >= 0 ? stamp / 24 : -((-stamp + 23) / 24);
  return sys_days{days{d}};
}

int parse_int(std::string_view text, std::size_t pos, std::size_t len) {
  if (pos + len > text.size()) throw ParseError("truncated timestamp: " + std::string(text));
  int value = 0;
  auto first = text.data() + pos;
  auto [ptr, ec] = std::from_chars(first, first + len, value);
  if (ec != std::errc{} || ptr != first + len)
    throw ParseError("bad timestamp field in: " + std::string(text));
  return value;
}

}  // namespace

std::string_view to_string(CustomerType type) {
  switch (type) {
    case CustomerType::Residential: return "residential";
    case CustomerType::Commercial: return "commercial";
    case CustomerType::Industrial: return "industrial";
  }
  return "unknown";
}

std::string_view to_string(DayKind kind) {
  return kind == DayKind::Weekday ? "weekday" : "weekend";
}

CustomerType parse_customer_type(std::string_view text) {
  if (text == "residential") return CustomerType::Residential;
  if (text == "commercial") return CustomerType::Commercial;
  if (text == "industrial") return CustomerType::Industrial;
  throw ParseError("unknown customer type: " + std::string(text));
}

DayKind parse_day_kind(std::string_view text) {
  if (text == "weekday") return DayKind::Weekday;
  if (text == "weekend") return DayKind::Weekend;
  throw ParseError("unknown day kind: " + std::string(text));
}

HourStamp make_hour_stamp(int year, unsigned month, unsigned day, int hour) {
  using namespace std::chrono;
  year_month_day ymd{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}};
  if (!ymd.ok()) throw ParseError("invalid calendar date");
  return static_cast<HourStamp>(sys_days{ymd}.time_since_epoch().count()) * 24 + hour;
}

// Accepts YYYY-MM-DDTHH[:MM[:SS]][Z]; minutes and seconds must be zero.
HourStamp parse_iso8601(std::string_view text) {
  while (!text.empty() && (text.back() == ' ' || text.back() == '\r')) text.remove_suffix(1);
  if (!text.empty() && text.back() == 'Z') text.remove_suffix(1);
  if (text.size() < 13 || text[4] != '-' || text[7] != '-' || (text[10] != 'T' && text[10] != ' '))
    throw ParseError("bad ISO-8601 timestamp: " + std::string(text));
  int y = parse_int(text, 0, 4);
  int mo = parse_int(text, 5, 2);
  int d = parse_int(text, 8, 2);
  int h = parse_int(text, 11, 2);
  int minute = 0, second = 0;
  if (text.size() >= 16) {
    if (text[13] != ':') throw ParseError("bad ISO-8601 timestamp: " + std::string(text));
    minute = parse_int(text, 14, 2);
  }
  if (text.size() >= 19) {
    if (text[16] != ':') throw ParseError("bad ISO-8601 timestamp: " + std::string(text));
    second = parse_int(text, 17, 2);
  }
  if (h > 23 || minute != 0 || second != 0)
    throw ParseError("timestamp is not on an hour boundary: " + std::string(text));
  return make_hour_stamp(y, static_cast<unsigned>(mo), static_cast<unsigned>(d), h);
}

std::string format_iso8601(HourStamp stamp) {
  using namespace std::chrono;
  year_month_day ymd{day_of(stamp)};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:00:00Z", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                hour_of_day(stamp));
  return buf;
}

int hour_of_day(HourStamp stamp) {
  auto h = stamp % 24;
  return static_cast<int>(h < 0 ? h + 24 : h);
}

DayKind day_kind_of(HourStamp stamp) {
  std::chrono::weekday wd{day_of(stamp)};
  auto c = wd.c_encoding();  // 0 = Sunday
  return (c == 0 || c == 6) ? DayKind::Weekend : DayKind::Weekday;
}

HourStamp next_midnight(HourStamp stamp) {
  int h = hour_of_day(stamp);
  return h == 0 ? stamp : stamp + (24 - h);
}

HourStamp month_start(HourStamp stamp) {
  using namespace std::chrono;
  year_month_day ymd{day_of(stamp)};
  year_month_day first{ymd.year(), ymd.month(), std::chrono::day{1}};
  return static_cast<HourStamp>(sys_days{first}.time_since_epoch().count()) * 24;
}

HourStamp add_calendar_months(HourStamp stamp, int months) {
  using namespace std::chrono;
  year_month_day ymd{day_of(month_start(stamp))};
  year_month ym = year_month{ymd.year(), ymd.month()} + std::chrono::months{months};
  year_month_day first{ym.year(), ym.month(), std::chrono::day{1}};
  return static_cast<HourStamp>(sys_days{first}.time_since_epoch().count()) * 24;
}

}  // namespace gridobs
