#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gridobs/amigen.hpp"
#include "gridobs/bcse.hpp"
#include "gridobs/feeder.hpp"

namespace gridobs {

struct PosteriorState {
  std::string customer;
  std::vector<int> candidates;  // class ids
  std::vector<double> probabilities;
  int iterations = 0;
  std::vector<std::vector<double>> history;  // probabilities after every update, prior first

  static PosteriorState uniform(std::string customer, std::vector<int> candidates);
};

// Diagonal of the inverse residual covariance.
struct PhiMatrix {
  std::vector<double> diagonal;
};

/// One multiplicative Bayes step over the candidate classes. The
/// log-likelihoods are shifted by their maximum before exponentiation and the
/// result is renormalized. A class at probability 0 stays there.
PosteriorState update_posterior(const PosteriorState& state,
                                std::span<const std::vector<double>> class_residuals, const PhiMatrix& phi);

// `samples` holds one residual vector per row. Each diagonal entry is
// 1 / max(sample variance, epsilon).
PhiMatrix estimate_phi(std::span<const std::vector<double>> samples, double epsilon = 1e-12);

struct HeadSample {
  HourStamp time = 0;
  Phasor voltage{1.0, 0.0};
  Phasor current{};
};

// Hourly pseudo-load (kWh) of one candidate class over the evaluation month.
struct CandidateSeries {
  int class_id = 0;
  std::vector<double> hourly;  // kHoursPerMonth values from `start`
};

struct UnobservedCustomer {
  std::string id;
  CustomerType type = CustomerType::Residential;
  std::size_t node = 0;        // node index
  double power_factor = 1.0;
  double bill_kwh = 0.0;
  // Candidate pseudo-loads per day kind.
  std::array<std::vector<CandidateSeries>, 2> candidates;
};

struct IdentificationProblem {
  const FeederModel* feeder = nullptr;
  HourStamp start = 0;                 // first hour of the evaluation month
  std::vector<UnobservedCustomer> customers;
  std::vector<HeadSample> head;        // one sample per hour of the month
};

struct RblConfig {
  double threshold = 0.99;
  int max_iterations = 200;
  int phi_window = 24;     // steps pooled to estimate Phi before updating
  int max_passes = 3;      // sweeps over all customers
  double phi_epsilon = 1e-12;
  EstimatorConfig estimator;
  WeightConfig weights;
};

struct IdentificationEntry {
  std::string customer;
  CustomerType type = CustomerType::Residential;
  DayKind day_kind = DayKind::Weekday;
  std::vector<int> candidates;
  int identified = -1;                 // class id
  std::vector<double> posterior;
  int iterations = 0;
  bool reached_threshold = false;
  int skipped_steps = 0;
  std::vector<std::vector<double>> trajectory;
  std::string error;
};

struct IdentificationReport {
  std::vector<IdentificationEntry> entries;
  int passes = 0;

  // Identified class id, or -1 when the customer/day kind is missing.
  int assigned(std::string_view customer, DayKind kind) const;
};

// Index into `candidates[kind]` per customer and day kind.
using Assignment = std::vector<std::array<std::size_t, 2>>;

// Mixture weights over `candidates[kind]` per customer and day kind. A
// customer's context load is the weighted sum of its candidate series.
using ContextWeights = std::vector<std::array<std::vector<double>, 2>>;

/// Starting classes: for each customer and day kind, the candidate whose
/// centroid daily energy is closest to bill / 28.
Assignment initial_assignment(const IdentificationProblem& problem,
                              std::span<const std::array<std::vector<double>, 2>> centroid_energy);

ContextWeights one_hot(const IdentificationProblem& problem, const Assignment& assignment);

/// Identifies one customer's class for one day kind, holding every other
/// customer at its context load. Steps are the month's hours of that day kind.
IdentificationEntry identify_customer(const IdentificationProblem& problem, std::size_t customer, DayKind kind,
                                      const ContextWeights& context, const RblConfig& config);
IdentificationEntry identify_customer(const IdentificationProblem& problem, std::size_t customer, DayKind kind,
                                      const Assignment& assignment, const RblConfig& config);

/// Sequential passes over all customers and both day kinds. Each result
/// puts that customer's context on the identified class before the
/// following customers are processed. Stops after a pass in which no
/// identified class changed, or after `max_passes`.
IdentificationReport identify_all(const IdentificationProblem& problem, ContextWeights context,
                                  const RblConfig& config);
IdentificationReport identify_all(const IdentificationProblem& problem, const Assignment& assignment,
                                  const RblConfig& config);

// Node loads (pu) at hour offset `t` of the month under `context`.
std::vector<Phasor> pseudo_loads(const IdentificationProblem& problem, const ContextWeights& context, int t);
std::vector<Phasor> pseudo_loads(const IdentificationProblem& problem, const Assignment& assignment, int t);

std::string serialize_report(const IdentificationReport& report);
IdentificationReport parse_report(std::string_view text);
void save_report(const IdentificationReport& report, const std::filesystem::path& path);
IdentificationReport load_report(const std::filesystem::path& path);
// customer,day_kind,iteration,class_id,probability
void write_trajectories(const IdentificationReport& report, const std::filesystem::path& path);

}  // namespace gridobs
