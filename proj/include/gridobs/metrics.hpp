#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gridobs/amigen.hpp"

namespace gridobs {

struct MapeResult {
  double value = 0.0;        // percent
  std::size_t samples = 0;   // hours that entered the mean
  std::size_t excluded = 0;  // hours with zero actual load
};

/// Mean absolute percentage error over the hours with a nonzero actual
/// value. Throws InvalidArgument when every actual value is zero or the
/// series lengths differ.
MapeResult mape(std::span<const double> actual, std::span<const double> estimated);

// Pearson correlation; throws NumericalError on zero variance.
double goodness_r(std::span<const double> actual, std::span<const double> estimated);

double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

// bill / 672 in every hour.
std::vector<double> baseline_uniform(double bill_kwh);

/// bill / 28 per day shaped by `profile` (unit daily sum, nonnegative).
std::vector<double> baseline_profile_scaling(double bill_kwh, const Profile24& profile);

struct ScopeMetrics {
  std::optional<MapeResult> mape;
  std::optional<double> r;
};

struct MetricsReport {
  // Keyed by scope name, e.g. "feeder_weekday" or "customer_weekend".
  std::map<std::string, std::map<std::string, ScopeMetrics>> estimators;
  std::map<std::string, double> clustering_ari;  // per subset
  std::optional<double> identification_accuracy;
  std::optional<double> identification_confident;  // share at posterior >= threshold
  std::optional<double> voltage_magnitude_error;   // percent
  std::optional<double> voltage_phase_error;       // percent
  std::map<std::string, double> extra;
};

std::string serialize_metrics(const MetricsReport& report);
MetricsReport parse_metrics(std::string_view text);
void save_metrics(const MetricsReport& report, const std::filesystem::path& path);
MetricsReport load_metrics(const std::filesystem::path& path);

}  // namespace gridobs
