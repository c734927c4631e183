#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gridobs/common.hpp"

namespace gridobs {

class FeederModel;

using Profile24 = std::array<double, kHoursPerDay>;

/// Hourly consumption of one customer. `hours` is strictly increasing; a
/// synthetic record is gap-free, an ingested one may have gaps where rows
/// were dropped during cleaning.
struct CustomerRecord {
  std::string id;
  CustomerType type = CustomerType::Residential;
  std::vector<HourStamp> hours;
  std::vector<double> kwh;
  // Planted classes, synthetic data only.
  std::optional<int> true_weekday_class;
  std::optional<int> true_weekend_class;

  std::optional<int> true_class(DayKind kind) const {
    return kind == DayKind::Weekday ? true_weekday_class : true_weekend_class;
  }
};

struct MonthlyBill {
  std::string customer_id;
  int month = 0;          // window index, see MonthAlignment
  HourStamp start = 0;    // first hour of the normalized 28-day month
  double energy_kwh = 0.0;
};

struct DailyProfile {
  Profile24 values{};
  std::string owner;
  DayKind day_kind = DayKind::Weekday;
};

struct DataSubset {
  CustomerType type = CustomerType::Residential;
  DayKind day_kind = DayKind::Weekday;
  std::vector<DailyProfile> profiles;
};

// How a normalized 28-day month is placed on the timeline.
//   Calendar: the first 28 days of each calendar month.
//   Blocks:   consecutive 28-day blocks from the record's first midnight.
enum class MonthAlignment { Calendar, Blocks };

MonthAlignment parse_month_alignment(std::string_view text);
std::string_view to_string(MonthAlignment alignment);

struct MonthWindow {
  int index = 0;
  HourStamp start = 0;
};

// Start of window `index` for this record.
HourStamp month_window_start(const CustomerRecord& record, int index, MonthAlignment alignment);
// Windows fully covered by hourly data.
std::vector<MonthWindow> complete_months(const CustomerRecord& record, MonthAlignment alignment);
// The 672 readings of a complete window; throws InvalidArgument otherwise.
std::span<const double> month_readings(const CustomerRecord& record, HourStamp start);

MonthlyBill bill_from_truth(const CustomerRecord& record, int month, MonthAlignment alignment);

struct ClassCounts {
  int weekday = 2;
  int weekend = 3;
};

struct PopulationSpec {
  std::array<int, 3> counts{100, 30, 10};   // residential, commercial, industrial
  std::array<ClassCounts, 3> classes{ClassCounts{4, 6}, ClassCounts{2, 3}, ClassCounts{2, 3}};
  int months = 6;
  std::uint64_t seed = 1;
  double noise = 0.15;                      // hourly log-normal sigma for residential
  HourStamp start = make_hour_stamp(2018, 1, 1);  // a Monday
  std::array<double, 3> mean_kwh{1.5, 15.0, 60.0};  // per-type mean hourly energy
};

/// Planted class shapes. Weekday shapes have daily sum 24; weekend shapes
/// carry the type's weekend/weekday energy ratio, so a noiseless customer's
/// average profile is exactly `scale * shape`.
class ClassLibrary {
 public:
  explicit ClassLibrary(const PopulationSpec& spec);

  int class_count(CustomerType type, DayKind kind) const;
  const Profile24& shape(CustomerType type, DayKind kind, int cls) const;
  // Hourly noise sigma for customers of this type.
  double noise(CustomerType type) const;

 private:
  std::array<std::array<std::vector<Profile24>, 2>, 3> shapes_;
  std::array<double, 3> noise_{};
};

// Mean weekend/weekday daily energy ratio of each type.
double weekend_energy_ratio(CustomerType type);

CustomerRecord generate_customer(const ClassLibrary& library, const PopulationSpec& spec,
                                 std::string id, CustomerType type, int weekday_class,
                                 int weekend_class, double scale, std::uint64_t stream);

/// Observed population, ids R0001.., C0001.., I0001... Classes are assigned
/// in balanced proportions.
std::vector<CustomerRecord> generate_population(const PopulationSpec& spec);

/// One record per customer declared in the feeder, sized so the mean hourly
/// energy equals the customer's avg_kw. Shares the class library of `spec`.
std::vector<CustomerRecord> generate_feeder_customers(const PopulationSpec& spec,
                                                      const FeederModel& feeder);

struct IngestReport {
  std::size_t rows = 0;
  std::size_t dropped_missing = 0;
  std::size_t dropped_negative = 0;
  std::size_t dropped_duplicate = 0;
  std::size_t gaps = 0;  // missing-hour runs inside customer series
  std::vector<std::string> messages;
};

struct IngestResult {
  std::vector<CustomerRecord> records;
  IngestReport report;
};

// CSV with header `customer_id,timestamp_iso8601,kwh,type`.
IngestResult ingest_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, std::span<const CustomerRecord> records);

std::array<DataSubset, 6> partition_subsets(std::span<const CustomerRecord> records);
std::size_t subset_slot(CustomerType type, DayKind kind);

// Average profile over all readings of the given day kind; nullopt when the
// record has no such readings.
std::optional<Profile24> average_profile(const CustomerRecord& record, DayKind kind);

}  // namespace gridobs
