#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace gridobs {

using Phasor = std::complex<double>;

// Hours since 1970-01-01T00:00Z.
using HourStamp = std::int64_t;

inline constexpr int kHoursPerDay = 24;
inline constexpr int kDaysPerWeek = 7;
inline constexpr int kWeeksPerMonth = 4;
inline constexpr int kDaysPerMonth = kDaysPerWeek * kWeeksPerMonth;
inline constexpr int kHoursPerMonth = kDaysPerMonth * kHoursPerDay;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file or record.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Feeder graph is not a connected radial tree rooted at the slack node.
class TopologyError : public Error {
 public:
  using Error::Error;
};

// Iterative solver did not reach its tolerance.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

// Singular system, non-finite loss, degenerate statistics.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Violated precondition on an argument.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

enum class CustomerType { Residential, Commercial, Industrial };
enum class DayKind { Weekday, Weekend };

inline constexpr CustomerType kCustomerTypes[] = {
    CustomerType::Residential, CustomerType::Commercial, CustomerType::Industrial};
inline constexpr DayKind kDayKinds[] = {DayKind::Weekday, DayKind::Weekend};

std::string_view to_string(CustomerType type);
std::string_view to_string(DayKind kind);
CustomerType parse_customer_type(std::string_view text);
DayKind parse_day_kind(std::string_view text);

inline int index_of(CustomerType type) { return static_cast<int>(type); }
inline int index_of(DayKind kind) { return static_cast<int>(kind); }

// Calendar helpers (UTC, proleptic Gregorian).
HourStamp make_hour_stamp(int year, unsigned month, unsigned day, int hour = 0);
HourStamp parse_iso8601(std::string_view text);
std::string format_iso8601(HourStamp stamp);
int hour_of_day(HourStamp stamp);
DayKind day_kind_of(HourStamp stamp);
// Midnight at or after `stamp`.
HourStamp next_midnight(HourStamp stamp);
// Midnight on the first day of the calendar month containing `stamp`.
HourStamp month_start(HourStamp stamp);
// First day of the calendar month `months` after the month containing `stamp`.
HourStamp add_calendar_months(HourStamp stamp, int months);

}  // namespace gridobs
