#include "gridobs/amigen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "gridobs/feeder.hpp"

namespace gridobs {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                         std::uint64_t c = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(c)};
  return std::mt19937_64(seq);
}

// Mean-one log-normal factor.
double lognormal_factor(std::mt19937_64& rng, double sigma) {
  if (sigma <= 0.0) return 1.0;
  std::normal_distribution<double> normal(0.0, 1.0);
  return std::exp(sigma * normal(rng) - 0.5 * sigma * sigma);
}

Profile24 random_shape(std::mt19937_64& rng, double amp_lo, double amp_hi) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> terms(1, 3);
  const double periods[] = {24.0, 12.0, 8.0};
  int count = terms(rng);
  std::array<double, 3> amp{}, phase{};
  for (int t = 0; t < count; ++t) {
    amp[t] = amp_lo + (amp_hi - amp_lo) * unit(rng);
    phase[t] = 2.0 * kPi * unit(rng);
  }
  Profile24 shape{};
  for (int h = 0; h < kHoursPerDay; ++h) {
    double v = 1.0;
    for (int t = 0; t < count; ++t) v += amp[t] * std::sin(2.0 * kPi * h / periods[t] + phase[t]);
    shape[h] = v;
  }
  double lo = *std::min_element(shape.begin(), shape.end());
  if (lo < 0.15) for (auto& v : shape) v += 0.15 - lo;
  double mean = std::accumulate(shape.begin(), shape.end(), 0.0) / kHoursPerDay;
  for (auto& v : shape) v /= mean;
  return shape;
}

double rms_difference(const Profile24& a, const Profile24& b) {
  double s = 0.0;
  for (int h = 0; h < kHoursPerDay; ++h) s += (a[h] - b[h]) * (a[h] - b[h]);
  return std::sqrt(s / kHoursPerDay);
}

// Labels 0..k-1 in near-equal proportions, shuffled.
std::vector<int> balanced_labels(std::size_t n, int k, std::mt19937_64& rng) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % static_cast<std::size_t>(k));
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

// Multiplier turning the weekday shape scale into the mean hourly energy.
double mean_level(CustomerType type) {
  return (5.0 + 2.0 * weekend_energy_ratio(type)) / 7.0;
}

bool parse_double(std::string_view text, double& out) {
  std::string s(text);
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  if (end == s.c_str()) return false;
  while (*end == ' ' || *end == '\r') ++end;
  return *end == '\0';
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t pos = 0;
  while (true) {
    auto comma = line.find(',', pos);
    auto field = line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
    while (!field.empty() && (field.front() == ' ')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\r')) field.remove_suffix(1);
    fields.push_back(field);
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return fields;
}

}  // namespace

MonthAlignment parse_month_alignment(std::string_view text) {
  if (text == "calendar") return MonthAlignment::Calendar;
  if (text == "blocks") return MonthAlignment::Blocks;
  throw ParseError("unknown month alignment: " + std::string(text));
}

std::string_view to_string(MonthAlignment alignment) {
  return alignment == MonthAlignment::Calendar ? "calendar" : "blocks";
}

double weekend_energy_ratio(CustomerType type) {
  switch (type) {
    case CustomerType::Residential: return 1.15;
    case CustomerType::Commercial: return 0.45;
    case CustomerType::Industrial: return 0.70;
  }
  return 1.0;
}

ClassLibrary::ClassLibrary(const PopulationSpec& spec) {
  const double type_noise[] = {1.0, 0.6, 0.4};
  const double amp_lo[] = {0.25, 0.20, 0.15};
  const double amp_hi[] = {0.70, 0.60, 0.45};
  for (auto type : kCustomerTypes) {
    int t = index_of(type);
    noise_[t] = spec.noise * type_noise[t];
    for (auto kind : kDayKinds) {
      int k = kind == DayKind::Weekday ? spec.classes[t].weekday : spec.classes[t].weekend;
      if (k < 1) throw InvalidArgument("every customer type needs at least one class per day kind");
      auto rng = make_rng(spec.seed, 0xC1A55ull, t, index_of(kind));
      auto& shapes = shapes_[t][index_of(kind)];
      double min_gap = 0.22;
      int attempts = 0;
      while (static_cast<int>(shapes.size()) < k) {
        auto candidate = random_shape(rng, amp_lo[t], amp_hi[t]);
        bool distinct = std::all_of(shapes.begin(), shapes.end(), [&](const Profile24& s) {
          return rms_difference(s, candidate) >= min_gap;
        });
        if (distinct) shapes.push_back(candidate);
        if (++attempts % 2000 == 0) min_gap *= 0.9;
      }
      if (kind == DayKind::Weekend)
        for (auto& s : shapes)
          for (auto& v : s) v *= weekend_energy_ratio(type);
    }
  }
}

int ClassLibrary::class_count(CustomerType type, DayKind kind) const {
  return static_cast<int>(shapes_[index_of(type)][index_of(kind)].size());
}

const Profile24& ClassLibrary::shape(CustomerType type, DayKind kind, int cls) const {
  const auto& shapes = shapes_[index_of(type)][index_of(kind)];
  if (cls < 0 || cls >= static_cast<int>(shapes.size())) throw InvalidArgument("class out of range");
  return shapes[static_cast<std::size_t>(cls)];
}

double ClassLibrary::noise(CustomerType type) const { return noise_[index_of(type)]; }

CustomerRecord generate_customer(const ClassLibrary& library, const PopulationSpec& spec,
                                 std::string id, CustomerType type, int weekday_class,
                                 int weekend_class, double scale, std::uint64_t stream) {
  if (spec.months < 1) throw InvalidArgument("months must be >= 1");
  CustomerRecord rec;
  rec.id = std::move(id);
  rec.type = type;
  rec.true_weekday_class = weekday_class;
  rec.true_weekend_class = weekend_class;
  const auto& wd = library.shape(type, DayKind::Weekday, weekday_class);
  const auto& we = library.shape(type, DayKind::Weekend, weekend_class);
  const double hourly_sigma = library.noise(type);
  const double daily_sigma = 0.5 * hourly_sigma;

  auto rng = make_rng(spec.seed, 0x5EEDull, stream);
  const HourStamp start = next_midnight(spec.start);
  const int days = spec.months * kDaysPerMonth;
  rec.hours.reserve(static_cast<std::size_t>(days) * kHoursPerDay);
  rec.kwh.reserve(rec.hours.capacity());
  for (int d = 0; d < days; ++d) {
    HourStamp day = start + static_cast<HourStamp>(d) * kHoursPerDay;
    const auto& shape = day_kind_of(day) == DayKind::Weekday ? wd : we;
    double level = scale * lognormal_factor(rng, daily_sigma);
    for (int h = 0; h < kHoursPerDay; ++h) {
      rec.hours.push_back(day + h);
      rec.kwh.push_back(level * shape[h] * lognormal_factor(rng, hourly_sigma));
    }
  }
  return rec;
}

std::vector<CustomerRecord> generate_population(const PopulationSpec& spec) {
  const char prefix[] = {'R', 'C', 'I'};
  std::vector<CustomerRecord> out;
  ClassLibrary library(spec);
  for (auto type : kCustomerTypes) {
    int t = index_of(type);
    int count = spec.counts[t];
    if (count < 0) throw InvalidArgument("negative customer count");
    if (count == 0) continue;
    auto assign_rng = make_rng(spec.seed, 0xA551ull, t);
    auto wd = balanced_labels(count, library.class_count(type, DayKind::Weekday), assign_rng);
    auto we = balanced_labels(count, library.class_count(type, DayKind::Weekend), assign_rng);
    auto scale_rng = make_rng(spec.seed, 0x5CA1Eull, t);
    for (int i = 0; i < count; ++i) {
      double scale = spec.mean_kwh[t] / mean_level(type) * lognormal_factor(scale_rng, 0.3);
      char id[16];
      std::snprintf(id, sizeof id, "%c%04d", prefix[t], i + 1);
      out.push_back(generate_customer(library, spec, id, type, wd[i], we[i], scale,
                                      static_cast<std::uint64_t>(t) * 1000000ull + i));
    }
  }
  return out;
}

std::vector<CustomerRecord> generate_feeder_customers(const PopulationSpec& spec,
                                                      const FeederModel& feeder) {
  ClassLibrary library(spec);
  std::vector<CustomerRecord> out;
  std::array<std::vector<std::size_t>, 3> by_type;
  const auto& customers = feeder.customers();
  for (std::size_t i = 0; i < customers.size(); ++i) by_type[index_of(customers[i].type)].push_back(i);
  std::vector<std::pair<int, int>> classes(customers.size());
  for (auto type : kCustomerTypes) {
    int t = index_of(type);
    if (by_type[t].empty()) continue;
    auto rng = make_rng(spec.seed, 0xFEEDull, t);
    auto wd = balanced_labels(by_type[t].size(), library.class_count(type, DayKind::Weekday), rng);
    auto we = balanced_labels(by_type[t].size(), library.class_count(type, DayKind::Weekend), rng);
    for (std::size_t i = 0; i < by_type[t].size(); ++i) classes[by_type[t][i]] = {wd[i], we[i]};
  }
  for (std::size_t i = 0; i < customers.size(); ++i) {
    const auto& c = customers[i];
    double scale = c.avg_kw / mean_level(c.type);
    out.push_back(generate_customer(library, spec, c.id, c.type, classes[i].first,
                                    classes[i].second, scale, 0xFEED0000ull + i));
  }
  return out;
}

HourStamp month_window_start(const CustomerRecord& record, int index, MonthAlignment alignment) {
  if (record.hours.empty()) throw InvalidArgument("record " + record.id + " has no readings");
  if (alignment == MonthAlignment::Blocks)
    return next_midnight(record.hours.front()) + static_cast<HourStamp>(index) * kHoursPerMonth;
  return add_calendar_months(month_start(record.hours.front()), index);
}

namespace {

// Offset of a complete 672-hour window starting at `start`, if any.
std::optional<std::size_t> window_offset(const CustomerRecord& record, HourStamp start) {
  auto it = std::lower_bound(record.hours.begin(), record.hours.end(), start);
  if (it == record.hours.end() || *it != start) return std::nullopt;
  auto pos = static_cast<std::size_t>(it - record.hours.begin());
  if (pos + kHoursPerMonth > record.hours.size()) return std::nullopt;
  if (record.hours[pos + kHoursPerMonth - 1] != start + kHoursPerMonth - 1) return std::nullopt;
  return pos;
}

}  // namespace

std::vector<MonthWindow> complete_months(const CustomerRecord& record, MonthAlignment alignment) {
  std::vector<MonthWindow> out;
  if (record.hours.empty()) return out;
  for (int index = 0;; ++index) {
    HourStamp start = month_window_start(record, index, alignment);
    if (start > record.hours.back()) break;
    if (window_offset(record, start)) out.push_back({index, start});
  }
  return out;
}

std::span<const double> month_readings(const CustomerRecord& record, HourStamp start) {
  auto pos = window_offset(record, start);
  if (!pos)
    throw InvalidArgument("customer " + record.id + ": month starting " + format_iso8601(start) +
                          " is incomplete");
  return std::span<const double>(record.kwh).subspan(*pos, kHoursPerMonth);
}

MonthlyBill bill_from_truth(const CustomerRecord& record, int month, MonthAlignment alignment) {
  HourStamp start = month_window_start(record, month, alignment);
  auto readings = month_readings(record, start);
  MonthlyBill bill;
  bill.customer_id = record.id;
  bill.month = month;
  bill.start = start;
  bill.energy_kwh = std::accumulate(readings.begin(), readings.end(), 0.0);
  return bill;
}

IngestResult ingest_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  IngestResult result;
  auto& report = result.report;

  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty file: " + path.string());
  {
    auto header = split_csv(line);
    const char* expected[] = {"customer_id", "timestamp_iso8601", "kwh", "type"};
    if (header.size() != 4 || !std::equal(header.begin(), header.end(), std::begin(expected)))
      throw ParseError("schema mismatch: expected header customer_id,timestamp_iso8601,kwh,type");
  }

  struct Pending {
    CustomerType type;
    std::vector<std::pair<HourStamp, double>> rows;
  };
  std::map<std::string, std::size_t> index;
  std::vector<std::string> order;
  std::vector<Pending> pending;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv(line);
    if (fields.size() != 4)
      throw ParseError("schema mismatch at line " + std::to_string(line_no) + ": expected 4 fields");
    ++report.rows;
    std::string id(fields[0]);
    HourStamp stamp = parse_iso8601(fields[1]);
    CustomerType type = parse_customer_type(fields[3]);
    auto [it, inserted] = index.emplace(id, pending.size());
    if (inserted) {
      pending.push_back({type, {}});
      order.push_back(id);
    } else if (pending[it->second].type != type) {
      throw ParseError("customer " + id + " changes type at line " + std::to_string(line_no));
    }
    double kwh = 0.0;
    if (!parse_double(fields[2], kwh) || !std::isfinite(kwh)) {
      ++report.dropped_missing;
      report.messages.push_back("line " + std::to_string(line_no) + ": missing reading for " + id);
      continue;
    }
    if (kwh < 0.0) {
      ++report.dropped_negative;
      report.messages.push_back("line " + std::to_string(line_no) + ": negative reading rejected for " + id);
      continue;
    }
    pending[it->second].rows.emplace_back(stamp, kwh);
  }
  if (report.rows == 0) throw ParseError("empty file: " + path.string());

  for (std::size_t c = 0; c < pending.size(); ++c) {
    auto& rows = pending[c].rows;
    std::stable_sort(rows.begin(), rows.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    CustomerRecord rec;
    rec.id = order[c];
    rec.type = pending[c].type;
    for (const auto& [stamp, kwh] : rows) {
      if (!rec.hours.empty() && rec.hours.back() == stamp) {
        ++report.dropped_duplicate;
        continue;
      }
      if (!rec.hours.empty() && stamp != rec.hours.back() + 1) ++report.gaps;
      rec.hours.push_back(stamp);
      rec.kwh.push_back(kwh);
    }
    if (!rec.hours.empty()) result.records.push_back(std::move(rec));
  }
  return result;
}

void write_csv(const std::filesystem::path& path, std::span<const CustomerRecord> records) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "customer_id,timestamp_iso8601,kwh,type\n";
  out.precision(17);
  for (const auto& r : records) {
    auto type = to_string(r.type);
    for (std::size_t i = 0; i < r.hours.size(); ++i)
      out << r.id << ',' << format_iso8601(r.hours[i]) << ',' << r.kwh[i] << ',' << type << '\n';
  }
}

std::optional<Profile24> average_profile(const CustomerRecord& record, DayKind kind) {
  Profile24 sum{};
  std::array<int, kHoursPerDay> count{};
  for (std::size_t i = 0; i < record.hours.size(); ++i) {
    if (day_kind_of(record.hours[i]) != kind) continue;
    int h = hour_of_day(record.hours[i]);
    sum[h] += record.kwh[i];
    ++count[h];
  }
  for (int h = 0; h < kHoursPerDay; ++h) {
    if (count[h] == 0) return std::nullopt;
    sum[h] /= count[h];
  }
  return sum;
}

std::size_t subset_slot(CustomerType type, DayKind kind) {
  return static_cast<std::size_t>(index_of(type) * 2 + index_of(kind));
}

std::array<DataSubset, 6> partition_subsets(std::span<const CustomerRecord> records) {
  std::array<DataSubset, 6> subsets;
  for (auto type : kCustomerTypes)
    for (auto kind : kDayKinds) {
      auto& s = subsets[subset_slot(type, kind)];
      s.type = type;
      s.day_kind = kind;
    }
  for (const auto& rec : records) {
    if (index_of(rec.type) < 0 || index_of(rec.type) > 2)
      throw InvalidArgument("unknown customer type for " + rec.id);
    for (auto kind : kDayKinds) {
      auto profile = average_profile(rec, kind);
      if (!profile) continue;
      subsets[subset_slot(rec.type, kind)].profiles.push_back({*profile, rec.id, kind});
    }
  }
  return subsets;
}

}  // namespace gridobs
