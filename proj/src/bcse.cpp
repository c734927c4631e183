#include "gridobs/bcse.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace gridobs {

std::string_view to_string(MeasurementKind kind) {
  switch (kind) {
    case MeasurementKind::HeadVoltage: return "head_voltage";
    case MeasurementKind::HeadCurrent: return "head_current";
    case MeasurementKind::NodeP: return "node_p";
    case MeasurementKind::NodeQ: return "node_q";
  }
  return "?";
}

MeasurementKind parse_measurement_kind(std::string_view text) {
  for (auto k : {MeasurementKind::HeadVoltage, MeasurementKind::HeadCurrent, MeasurementKind::NodeP,
                 MeasurementKind::NodeQ})
    if (to_string(k) == text) return k;
  throw ParseError("unknown measurement kind '" + std::string(text) + "'");
}

namespace {

struct NodePower {
  std::size_t node = 0;
  double p = 0.0, q = 0.0;
  double wp = 0.0, wq = 0.0;
};

struct Prepared {
  Phasor slack{1.0, 0.0};
  std::optional<Phasor> head_current;
  double head_weight = 0.0;
  std::vector<NodePower> powers;  // node-index order
};

Prepared prepare(const FeederModel& feeder, std::span<const Measurement> measurements) {
  Prepared out;
  int head_voltages = 0;
  const std::size_t n = feeder.node_count();
  std::vector<std::optional<std::size_t>> p_of(n), q_of(n);
  for (std::size_t i = 0; i < measurements.size(); ++i) {
    const auto& m = measurements[i];
    if (!(m.weight > 0.0) || !std::isfinite(m.weight))
      throw InvalidArgument("measurement weight must be positive and finite");
    switch (m.kind) {
      case MeasurementKind::HeadVoltage:
        if (m.location != feeder.slack_node()) throw InvalidArgument("head voltage must sit at the slack node");
        if (!(std::abs(m.value) > 0.0)) throw InvalidArgument("head voltage magnitude must be > 0");
        out.slack = m.value;
        ++head_voltages;
        break;
      case MeasurementKind::HeadCurrent:
        if (m.location != feeder.slack_node()) throw InvalidArgument("head current must sit at the slack node");
        if (out.head_current) throw InvalidArgument("more than one head current measurement");
        out.head_current = m.value;
        out.head_weight = m.weight;
        break;
      case MeasurementKind::NodeP:
      case MeasurementKind::NodeQ: {
        std::size_t idx = feeder.node_index(m.location);
        if (idx == feeder.slack_index()) throw InvalidArgument("power pseudo-measurement at the slack node");
        auto& slot = m.kind == MeasurementKind::NodeP ? p_of[idx] : q_of[idx];
        if (slot) throw InvalidArgument("duplicate power measurement at node " + std::to_string(m.location));
        slot = i;
        break;
      }
    }
  }
  if (head_voltages != 1) throw InvalidArgument("exactly one head voltage reference is required");
  for (std::size_t idx = 0; idx < n; ++idx) {
    if (!p_of[idx] && !q_of[idx]) continue;
    if (!p_of[idx] || !q_of[idx])
      throw InvalidArgument("node " + std::to_string(feeder.nodes()[idx].id) + " needs both P and Q");
    const auto& mp = measurements[*p_of[idx]];
    const auto& mq = measurements[*q_of[idx]];
    out.powers.push_back({idx, mp.value.real(), mq.value.real(), mp.weight, mq.weight});
  }
  return out;
}

// Load current drawn at node `n` implied by the branch currents.
Phasor node_current(const FeederModel& feeder, std::span<const Phasor> currents, std::size_t n) {
  Phasor out{};
  if (auto pb = feeder.parent_branch(n)) out += currents[*pb];
  for (auto c : feeder.child_branches(n)) out -= currents[c];
  return out;
}

LinearizedModel build_model(const FeederModel& feeder, const Prepared& prep, const Eigen::VectorXd& x) {
  const auto nb = static_cast<Eigen::Index>(feeder.branch_count());
  auto currents = state_currents(x);
  LinearizedModel m;
  m.voltages = forward_voltages(feeder, currents, prep.slack);

  const Eigen::Index rows = 2 * (static_cast<Eigen::Index>(prep.powers.size()) + (prep.head_current ? 1 : 0));
  m.z = Eigen::VectorXd::Zero(rows);
  m.h = Eigen::VectorXd::Zero(rows);
  m.H = Eigen::MatrixXd::Zero(rows, 2 * nb);
  m.W = Eigen::MatrixXd::Zero(rows, rows);

  Eigen::Index r = 0;
  if (prep.head_current) {
    Phasor ih{};
    for (auto b : feeder.child_branches(feeder.slack_index())) {
      ih += currents[b];
      m.H(r, static_cast<Eigen::Index>(b)) = 1.0;
      m.H(r + 1, nb + static_cast<Eigen::Index>(b)) = 1.0;
    }
    m.z(r) = prep.head_current->real();
    m.z(r + 1) = prep.head_current->imag();
    m.h(r) = ih.real();
    m.h(r + 1) = ih.imag();
    m.W(r, r) = m.W(r + 1, r + 1) = prep.head_weight;
    r += 2;
  }
  for (const auto& np : prep.powers) {
    const Phasor v = m.voltages[np.node];
    const double mag = std::abs(v);
    if (!(mag > 0.0)) throw NumericalError("zero voltage while converting power to current");
    const Phasor eq = std::conj(Phasor(np.p, np.q) / v);
    const Phasor est = node_current(feeder, currents, np.node);
    if (auto pb = feeder.parent_branch(np.node)) {
      m.H(r, static_cast<Eigen::Index>(*pb)) = 1.0;
      m.H(r + 1, nb + static_cast<Eigen::Index>(*pb)) = 1.0;
    }
    for (auto c : feeder.child_branches(np.node)) {
      m.H(r, static_cast<Eigen::Index>(c)) = -1.0;
      m.H(r + 1, nb + static_cast<Eigen::Index>(c)) = -1.0;
    }
    m.z(r) = eq.real();
    m.z(r + 1) = eq.imag();
    m.h(r) = est.real();
    m.h(r + 1) = est.imag();
    // I = (P - jQ) e^{j theta} / |V|; the map (P, Q) -> (I_r, I_x) is |V|^-1
    // times the reflection R = [[c, s], [s, -c]], so W_I = |V|^2 R W_PQ R.
    const double th = std::arg(v), c = std::cos(th), s = std::sin(th);
    Eigen::Matrix2d R;
    R << c, s, s, -c;
    Eigen::Matrix2d wpq = Eigen::Vector2d(np.wp, np.wq).asDiagonal();
    m.W.block<2, 2>(r, r) = mag * mag * R * wpq * R;
    r += 2;
  }
  return m;
}

double objective(const FeederModel& feeder, const Prepared& prep, const Eigen::VectorXd& x) {
  auto currents = state_currents(x);
  auto v = forward_voltages(feeder, currents, prep.slack);
  double j = 0.0;
  if (prep.head_current) {
    Phasor ih{};
    for (auto b : feeder.child_branches(feeder.slack_index())) ih += currents[b];
    j += prep.head_weight * std::norm(*prep.head_current - ih);
  }
  for (const auto& np : prep.powers) {
    Phasor s = v[np.node] * std::conj(node_current(feeder, currents, np.node));
    j += np.wp * (np.p - s.real()) * (np.p - s.real()) + np.wq * (np.q - s.imag()) * (np.q - s.imag());
  }
  return j;
}

}  // namespace

std::vector<Phasor> state_currents(const Eigen::VectorXd& x) {
  const auto nb = x.size() / 2;
  std::vector<Phasor> out(static_cast<std::size_t>(nb));
  for (Eigen::Index b = 0; b < nb; ++b) out[b] = {x(b), x(nb + b)};
  return out;
}

Eigen::VectorXd state_from_currents(std::span<const Phasor> currents) {
  const auto nb = static_cast<Eigen::Index>(currents.size());
  Eigen::VectorXd x(2 * nb);
  for (Eigen::Index b = 0; b < nb; ++b) {
    x(b) = currents[b].real();
    x(nb + b) = currents[b].imag();
  }
  return x;
}

LinearizedModel measurement_model(const FeederModel& feeder, std::span<const Measurement> measurements,
                                  const Eigen::VectorXd& x, Phasor slack_voltage) {
  if (x.size() != static_cast<Eigen::Index>(2 * feeder.branch_count()))
    throw InvalidArgument("state length must be 2 x branches");
  auto prep = prepare(feeder, measurements);
  prep.slack = slack_voltage;
  return build_model(feeder, prep, x);
}

EstimationResult solve_wls(const FeederModel& feeder, std::span<const Measurement> measurements,
                           const EstimatorConfig& config) {
  const auto prep = prepare(feeder, measurements);
  const auto nx = static_cast<Eigen::Index>(2 * feeder.branch_count());

  EstimationResult res;
  res.x = Eigen::VectorXd::Zero(nx);
  double j_cur = objective(feeder, prep, res.x);

  for (int it = 1; it <= config.max_iterations; ++it) {
    auto m = build_model(feeder, prep, res.x);
    Eigen::MatrixXd g = m.H.transpose() * m.W * m.H;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(g);
    const Eigen::VectorXd pivots = ldlt.vectorD().cwiseAbs();
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-14 ||
        !(pivots.minCoeff() > 1e-14 * pivots.maxCoeff()))
      throw NumericalError("gain matrix is singular: the measurement set does not observe every branch");
    Eigen::VectorXd dx = ldlt.solve(m.H.transpose() * m.W * (m.z - m.h));

    // Halving fires only when J rises by more than the relative slack.
    const bool final_step = dx.lpNorm<Eigen::Infinity>() < config.tolerance;
    double step = 1.0;
    Eigen::VectorXd trial = res.x + dx;
    double j_trial = objective(feeder, prep, trial);
    for (int h = 0; !final_step && h < config.max_halvings && j_trial > j_cur * (1.0 + config.monotonicity_slack);
         ++h) {
      step *= 0.5;
      trial = res.x + step * dx;
      j_trial = objective(feeder, prep, trial);
      ++res.halvings;
    }
    res.x = trial;
    j_cur = j_trial;
    res.iterations = it;
    if (final_step) {
      res.converged = true;
      break;
    }
  }
  if (!res.converged)
    throw ConvergenceError("state estimation did not converge in " + std::to_string(config.max_iterations) +
                           " iterations");
  res.voltages = forward_voltages(feeder, state_currents(res.x), prep.slack);
  res.objective = j_cur;
  for (const auto& e : residuals(feeder, measurements, res)) res.residuals.push_back(e.value);
  return res;
}

std::vector<ResidualEntry> residuals(const FeederModel& feeder, std::span<const Measurement> measurements,
                                     const EstimationResult& result) {
  auto currents = state_currents(result.x);
  std::vector<ResidualEntry> out;
  out.reserve(measurements.size() * 2);
  for (const auto& m : measurements) {
    switch (m.kind) {
      case MeasurementKind::HeadVoltage:
        out.push_back({m.kind, m.location, 0, 0.0, m.weight});
        out.push_back({m.kind, m.location, 1, 0.0, m.weight});
        break;
      case MeasurementKind::HeadCurrent: {
        Phasor ih{};
        for (auto b : feeder.child_branches(feeder.slack_index())) ih += currents[b];
        Phasor r = m.value - ih;
        out.push_back({m.kind, m.location, 0, r.real(), m.weight});
        out.push_back({m.kind, m.location, 1, r.imag(), m.weight});
        break;
      }
      case MeasurementKind::NodeP:
      case MeasurementKind::NodeQ: {
        std::size_t n = feeder.node_index(m.location);
        Phasor s = result.voltages[n] * std::conj(node_current(feeder, currents, n));
        double est = m.kind == MeasurementKind::NodeP ? s.real() : s.imag();
        out.push_back({m.kind, m.location, 0, m.value.real() - est, m.weight});
        break;
      }
    }
  }
  return out;
}

std::array<double, 2> head_current_residual(const FeederModel& feeder,
                                            std::span<const Measurement> measurements,
                                            const EstimationResult& result) {
  for (const auto& m : measurements) {
    if (m.kind != MeasurementKind::HeadCurrent) continue;
    Phasor ih{};
    auto currents = state_currents(result.x);
    for (auto b : feeder.child_branches(feeder.slack_index())) ih += currents[b];
    Phasor r = m.value - ih;
    return {r.real(), r.imag()};
  }
  throw InvalidArgument("no head current measurement");
}

std::vector<Measurement> make_measurements(const FeederModel& feeder, Phasor head_voltage,
                                           Phasor head_current, std::span<const Phasor> loads_pu,
                                           const WeightConfig& weights) {
  if (loads_pu.size() != feeder.node_count()) throw InvalidArgument("one load per node is required");
  const int slack = feeder.slack_node();
  std::vector<Measurement> out;
  out.push_back({MeasurementKind::HeadVoltage, slack, head_voltage, weights.pmu});
  out.push_back({MeasurementKind::HeadCurrent, slack, head_current, weights.pmu});
  auto weight_of = [&](double v) {
    double sigma = std::max(weights.pseudo_fraction * std::abs(v), weights.pseudo_floor);
    return 1.0 / (sigma * sigma);
  };
  for (std::size_t n = 0; n < feeder.node_count(); ++n) {
    if (n == feeder.slack_index()) continue;
    const int id = feeder.nodes()[n].id;
    out.push_back({MeasurementKind::NodeP, id, Phasor(loads_pu[n].real(), 0.0), weight_of(loads_pu[n].real())});
    out.push_back({MeasurementKind::NodeQ, id, Phasor(loads_pu[n].imag(), 0.0), weight_of(loads_pu[n].imag())});
  }
  return out;
}

}  // namespace gridobs
