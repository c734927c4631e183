#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gridobs/bcse.hpp"
#include "gridobs/config.hpp"
#include "gridobs/metrics.hpp"
#include "gridobs/mtsl.hpp"
#include "gridobs/rbl.hpp"
#include "gridobs/spectral.hpp"

namespace gridobs {

// A stage failed; what() names the stage and the underlying error.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& message)
      : Error(stage + ": " + message), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// Planted weekday/weekend classes of synthetic customers.
struct PlantedTruth {
  std::map<std::string, std::array<int, 2>> observed;
  std::map<std::string, std::array<int, 2>> feeder_customers;
};

void save_truth(const PlantedTruth& truth, const std::filesystem::path& path);
PlantedTruth load_truth(const std::filesystem::path& path);

/// Planted class -> discovered class of one bank subset, by majority vote of
/// the members' planted labels. When several discovered classes share a
/// majority, the one holding the most members of that planted class wins.
std::map<int, int> planted_to_discovered(const SubsetPatterns& subset,
                                         const std::map<std::string, std::array<int, 2>>& planted);
// Discovered class -> majority planted class of its members.
std::map<int, int> discovered_to_planted(const SubsetPatterns& subset,
                                         const std::map<std::string, std::array<int, 2>>& planted);

// True node loads (pu) at one hour from customer records.
std::vector<Phasor> true_node_loads(const FeederModel& feeder, std::span<const CustomerRecord> customers,
                                    HourStamp hour);

/// Head PMU samples for the 672 hours from `start`: power flow on the true
/// loads, then Gaussian noise of `noise * |value|` on each rectangular
/// component of voltage and current.
std::vector<HeadSample> synthesize_head_pmu(const FeederModel& feeder, std::span<const CustomerRecord> customers,
                                            HourStamp start, double noise, Phasor slack, std::uint64_t seed);

struct MeasurementStep {
  int step = 0;
  HourStamp time = 0;
  std::vector<Measurement> measurements;
};

// CSV: step,time,kind,location,re,im,weight
void write_measurements(const std::filesystem::path& path, std::span<const MeasurementStep> steps);
std::vector<MeasurementStep> read_measurements(const std::filesystem::path& path);

struct EstimationRun {
  std::vector<int> steps;
  std::vector<HourStamp> times;
  std::vector<EstimationResult> results;
  std::vector<std::string> failures;  // "step N: message"
  int iterations = 0;
  int halvings = 0;
};

EstimationRun estimate_series(const FeederModel& feeder, std::span<const MeasurementStep> steps,
                              const EstimatorConfig& config);
// Writes <prefix>states.csv, <prefix>voltages.csv, <prefix>residuals.csv and <prefix>log.csv.
void write_estimation(const std::filesystem::path& dir, const std::string& prefix, const FeederModel& feeder,
                      std::span<const MeasurementStep> steps, const EstimationRun& run);

struct VoltageErrors {
  double magnitude = 0.0;  // mean 100 * | |V_est| - |V| | / |V|
  double phase = 0.0;      // same, on angles measured from each side's own slack angle
  std::size_t samples = 0;
};

// Over all non-slack nodes and steps; both arguments hold one voltage vector
// per step.
VoltageErrors voltage_errors(const FeederModel& feeder, const std::vector<std::vector<Phasor>>& estimated,
                             const std::vector<std::vector<Phasor>>& truth);

struct RunSummary {
  std::map<std::string, double> seconds;  // wall time per stage
  MetricsReport metrics;
};

void run_gen_data(const ExperimentConfig& config, const std::filesystem::path& out);
void run_cluster(const ExperimentConfig& config, const std::filesystem::path& out);
void run_train_mtsl(const ExperimentConfig& config, const std::filesystem::path& out);
void run_identify(const ExperimentConfig& config, const std::filesystem::path& out);
void run_estimate(const ExperimentConfig& config, const std::filesystem::path& out);
MetricsReport run_evaluate(const ExperimentConfig& config, const std::filesystem::path& out);
RunSummary run_all(const ExperimentConfig& config, const std::filesystem::path& out);

// Disaggregates every bill in bills.csv with the identified classes.
void run_disaggregate(const ExperimentConfig& config, const std::filesystem::path& out);

}  // namespace gridobs
