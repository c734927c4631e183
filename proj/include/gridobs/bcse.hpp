#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gridobs/feeder.hpp"

namespace gridobs {

enum class MeasurementKind { HeadVoltage, HeadCurrent, NodeP, NodeQ };

std::string_view to_string(MeasurementKind kind);
MeasurementKind parse_measurement_kind(std::string_view text);

// Phasor kinds use the full complex value; NodeP/NodeQ use value.real() only.
// `location` is a node id (the slack for head measurements). `weight` is the
// inverse variance of each real component.
struct Measurement {
  MeasurementKind kind = MeasurementKind::NodeP;
  int location = 0;
  Phasor value{};
  double weight = 1.0;
};

struct EstimatorConfig {
  double tolerance = 1e-6;  // on ||dx||_inf, pu
  int max_iterations = 50;
  int max_halvings = 10;
  double monotonicity_slack = 1e-3;  // relative J increase tolerated without halving
};

/// h(x) and H for the current-domain measurement set. Node powers are turned
/// into equivalent load currents conj(S / V) at the voltages implied by x, so
/// the rows are linear in x and H is the branch-to-node incidence map. Rows
/// come in (re, im) pairs: head current first, then one pair per node with a
/// power pseudo-measurement, in node-index order.
struct LinearizedModel {
  Eigen::VectorXd z;  // equivalent measurements
  Eigen::VectorXd h;
  Eigen::MatrixXd H;  // rows x 2|branches|
  Eigen::MatrixXd W;  // block-diagonal weights
  std::vector<Phasor> voltages;
};

LinearizedModel measurement_model(const FeederModel& feeder, std::span<const Measurement> measurements,
                                  const Eigen::VectorXd& x, Phasor slack_voltage);

// Branch currents as phasors from x = [I_r; I_x].
std::vector<Phasor> state_currents(const Eigen::VectorXd& x);
Eigen::VectorXd state_from_currents(std::span<const Phasor> currents);

struct EstimationResult {
  bool converged = false;
  int iterations = 0;
  Eigen::VectorXd x;
  std::vector<double> residuals;  // same layout as residuals()
  std::vector<Phasor> voltages;
  double objective = 0.0;         // J in the original measurement space
  int halvings = 0;               // step-halving fallbacks taken
};

/// Gauss-Newton WLS from a flat start. Throws NumericalError when the gain
/// matrix is singular and ConvergenceError when the iteration limit is hit.
EstimationResult solve_wls(const FeederModel& feeder, std::span<const Measurement> measurements,
                           const EstimatorConfig& config = {});

struct ResidualEntry {
  MeasurementKind kind = MeasurementKind::NodeP;
  int location = 0;
  int component = 0;  // 0 = real part, 1 = imaginary part
  double value = 0.0;
  double weight = 1.0;
};

/// z - h(x) per measurement component: phasors give two entries, powers one.
/// Head voltage entries are zero since the estimate pins the slack to it.
std::vector<ResidualEntry> residuals(const FeederModel& feeder, std::span<const Measurement> measurements,
                                     const EstimationResult& result);

// Head-current residual (re, im) of a converged estimate.
std::array<double, 2> head_current_residual(const FeederModel& feeder,
                                            std::span<const Measurement> measurements,
                                            const EstimationResult& result);

struct WeightConfig {
  double pmu = 1e6;
  double pseudo_fraction = 0.2;  // sigma as a fraction of |value|
  double pseudo_floor = 1e-4;    // pu
};

/// Head voltage and current phasors plus P/Q pseudo-measurements at every
/// non-slack node. `loads_pu` is indexed by node index.
std::vector<Measurement> make_measurements(const FeederModel& feeder, Phasor head_voltage,
                                           Phasor head_current, std::span<const Phasor> loads_pu,
                                           const WeightConfig& weights = {});

}  // namespace gridobs
