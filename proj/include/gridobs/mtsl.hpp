#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gridobs/amigen.hpp"
#include "gridobs/regressor.hpp"

namespace gridobs {

struct MtslKey {
  CustomerType type = CustomerType::Residential;
  DayKind day_kind = DayKind::Weekday;
  int class_id = 0;

  bool operator==(const MtslKey&) const = default;
  auto operator<=>(const MtslKey&) const = default;
  std::string label() const;
};

// Training pairs of the three layers. Every regressor sees two inputs: the
// parent energy and the previous sibling's energy (0 for the first sibling).
struct LayerSets {
  std::array<Dataset, kWeeksPerMonth> weekly;                        // (E_M, E_W(i-1)) -> E_Wi
  std::array<Dataset, kDaysPerWeek> daily;                           // (E_W, E_D(i-1)) -> E_Di
  std::array<std::array<Dataset, kHoursPerDay>, 2> hourly;           // per day kind: (E_D, E_H(i-1)) -> E_Hi
  std::size_t months = 0;
};

using MonthFilter = std::function<bool(const MonthWindow&)>;

LayerSets build_training_sets(std::span<const CustomerRecord* const> members, MonthAlignment alignment,
                              const MonthFilter& use_month = {});

struct LayerMetrics {
  double rmse = 0.0;     // mean test RMSE over the layer's regressors (kWh)
  double max_rmse = 0.0;
  std::size_t pairs = 0; // pairs per regressor (first regressor of the layer)
};

class MtslModel {
 public:
  MtslKey key;
  std::array<Regressor, kWeeksPerMonth> weekly;
  std::array<Regressor, kDaysPerWeek> daily;
  std::array<std::array<Regressor, kHoursPerDay>, 2> hourly;
  std::array<LayerMetrics, 3> test_metrics{};
  std::size_t training_months = 0;
  // Mean monthly energy of the training months. Bills are scaled to this
  // magnitude before the cascade runs and the outputs scaled back, so the
  // regressors are never evaluated far outside their training range.
  double reference_energy = 0.0;
};

/// Trains all 4 + 7 + 2x24 regressors of one class. Needs at least 20 member
/// months.
MtslModel train_mtsl(const MtslKey& key, std::span<const CustomerRecord* const> members,
                     const TrainConfig& config, MonthAlignment alignment,
                     const MonthFilter& use_month = {});

struct Disaggregation {
  std::array<double, kWeeksPerMonth> weekly{};
  std::array<double, kDaysPerMonth> daily{};
  std::vector<double> hourly;  // 672 values
};

/// Cascade evaluation of a monthly bill. Each layer's outputs are clamped at
/// zero and rescaled to sum to their parent, so the hourly values sum to the
/// bill. A model with a positive reference_energy sees the bill at that
/// magnitude (see MtslModel).
Disaggregation disaggregate(const MtslModel& model, const MonthlyBill& bill);

/// Weekday hours from one model and weekend hours from another, rescaled so
/// the month still sums to the bill.
std::vector<double> splice_day_kinds(const MtslModel& weekday_model, const MtslModel& weekend_model,
                                     const MonthlyBill& bill);

std::string serialize_model(const MtslModel& model);
MtslModel parse_model(std::string_view text);
void save_model(const MtslModel& model, const std::filesystem::path& path);
MtslModel load_model(const std::filesystem::path& path);

// |cov(x, y)| / (sd(x) sd(y)); throws NumericalError on zero variance.
double abs_correlation(std::span<const double> x, std::span<const double> y);

struct CorrelationEntry {
  CustomerType type = CustomerType::Residential;
  std::string pair;  // e.g. "monthly-weekly"
  std::optional<double> rho;
  std::size_t samples = 0;
  std::string error;
};

/// Adjacent-timescale correlations per customer type: monthly-weekly,
/// weekly-daily and daily-hourly, the last two split by day kind.
std::vector<CorrelationEntry> timescale_correlation(std::span<const CustomerRecord> records,
                                                    MonthAlignment alignment);

}  // namespace gridobs
