#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "gridobs/amigen.hpp"
#include "gridobs/bcse.hpp"
#include "gridobs/rbl.hpp"
#include "gridobs/regressor.hpp"
#include "gridobs/spectral.hpp"

namespace gridobs {

struct EvaluationConfig {
  double pmu_noise = 0.001;   // relative sigma per rectangular component of the head PMU
  Phasor slack_voltage{1.0, 0.0};
};

/// Every knob of the pipeline. Sections mirror the config file; anything a
/// file leaves out keeps the default below.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "out";
  std::filesystem::path feeder;  // default_config() points this at the shipped fixture
  MonthAlignment alignment = MonthAlignment::Blocks;
  PopulationSpec population;
  SpectralOptions clustering;
  TrainConfig mtsl;
  int holdout_months = 1;  // trailing months kept out of MTSL training
  EstimatorConfig estimator;
  WeightConfig weights;
  RblConfig rbl;
  EvaluationConfig evaluation;

  // Pushes `seed` into every seeded sub-config.
  void apply_seed(std::uint64_t value);
  void validate() const;
};

ExperimentConfig default_config();
ExperimentConfig parse_config(std::string_view text);
// "default" selects the built-in configuration.
ExperimentConfig load_config(const std::string& path_or_default);
std::string serialize_config(const ExperimentConfig& config);

}  // namespace gridobs
