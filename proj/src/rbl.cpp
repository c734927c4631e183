#include "gridobs/rbl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

#include "json.hpp"

namespace gridobs {

PosteriorState PosteriorState::uniform(std::string customer, std::vector<int> candidates) {
  if (candidates.empty()) throw InvalidArgument("posterior needs at least one candidate class");
  PosteriorState s;
  s.customer = std::move(customer);
  s.probabilities.assign(candidates.size(), 1.0 / static_cast<double>(candidates.size()));
  s.candidates = std::move(candidates);
  s.history.push_back(s.probabilities);
  return s;
}

PosteriorState update_posterior(const PosteriorState& state,
                                std::span<const std::vector<double>> class_residuals, const PhiMatrix& phi) {
  const std::size_t n = state.probabilities.size();
  if (class_residuals.size() != n) throw InvalidArgument("one residual vector per candidate class is required");
  for (const auto& r : class_residuals)
    if (r.size() != phi.diagonal.size()) throw InvalidArgument("residual length does not match Phi");

  std::vector<double> loglik(n, -std::numeric_limits<double>::infinity());
  double shift = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    if (!(state.probabilities[i] > 0.0)) continue;
    double q = 0.0;
    for (std::size_t c = 0; c < phi.diagonal.size(); ++c) q += phi.diagonal[c] * class_residuals[i][c] * class_residuals[i][c];
    loglik[i] = -0.5 * q;
    shift = std::max(shift, loglik[i]);
  }
  if (!std::isfinite(shift)) throw NumericalError("posterior update: no finite likelihood");

  PosteriorState next = state;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double w = state.probabilities[i] > 0.0 ? state.probabilities[i] * std::exp(loglik[i] - shift) : 0.0;
    next.probabilities[i] = w;
    total += w;
  }
  if (!(total > 0.0) || !std::isfinite(total)) throw NumericalError("posterior update underflowed");
  for (auto& p : next.probabilities) p /= total;
  next.iterations = state.iterations + 1;
  next.history.push_back(next.probabilities);
  return next;
}

PhiMatrix estimate_phi(std::span<const std::vector<double>> samples, double epsilon) {
  if (samples.size() < 2) throw InvalidArgument("Phi needs at least 2 residual samples");
  const std::size_t d = samples.front().size();
  PhiMatrix phi;
  phi.diagonal.resize(d);
  for (std::size_t c = 0; c < d; ++c) {
    double mean = 0.0;
    for (const auto& s : samples) {
      if (s.size() != d) throw InvalidArgument("residual samples differ in length");
      mean += s[c];
    }
    mean /= static_cast<double>(samples.size());
    double var = 0.0;
    for (const auto& s : samples) var += (s[c] - mean) * (s[c] - mean);
    var /= static_cast<double>(samples.size() - 1);
    phi.diagonal[c] = 1.0 / std::max(var, epsilon);
  }
  return phi;
}

int IdentificationReport::assigned(std::string_view customer, DayKind kind) const {
  for (const auto& e : entries)
    if (e.customer == customer && e.day_kind == kind) return e.identified;
  return -1;
}

Assignment initial_assignment(const IdentificationProblem& problem,
                              std::span<const std::array<std::vector<double>, 2>> centroid_energy) {
  if (centroid_energy.size() != problem.customers.size())
    throw InvalidArgument("one centroid-energy table per customer is required");
  Assignment out(problem.customers.size(), {0, 0});
  for (std::size_t c = 0; c < problem.customers.size(); ++c) {
    const double daily = problem.customers[c].bill_kwh / kDaysPerMonth;
    for (int k = 0; k < 2; ++k) {
      const auto& energies = centroid_energy[c][k];
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < energies.size(); ++i) {
        double gap = std::abs(energies[i] - daily);
        if (gap < best) {
          best = gap;
          out[c][k] = i;
        }
      }
    }
  }
  return out;
}

namespace {

Phasor customer_load(const UnobservedCustomer& c, const CandidateSeries& series, int t, double base_kva) {
  const double p = series.hourly.at(static_cast<std::size_t>(t)) / base_kva;
  const double pf = std::clamp(c.power_factor, 1e-6, 1.0);
  return {p, p * std::tan(std::acos(pf))};
}

}  // namespace

ContextWeights one_hot(const IdentificationProblem& problem, const Assignment& assignment) {
  if (assignment.size() != problem.customers.size()) throw InvalidArgument("assignment size mismatch");
  ContextWeights out(problem.customers.size());
  for (std::size_t c = 0; c < problem.customers.size(); ++c)
    for (int k = 0; k < 2; ++k) {
      const auto n = problem.customers[c].candidates[k].size();
      if (n == 0) continue;
      if (assignment[c][k] >= n) throw InvalidArgument("assignment index out of range");
      out[c][k].assign(n, 0.0);
      out[c][k][assignment[c][k]] = 1.0;
    }
  return out;
}

namespace {

Phasor context_load(const UnobservedCustomer& cust, const std::vector<double>& weights, int kind, int t,
                    double base_kva) {
  const auto& cands = cust.candidates[kind];
  if (cands.empty()) throw InvalidArgument("customer " + cust.id + " has no candidate classes");
  if (weights.size() != cands.size()) throw InvalidArgument("context weights do not match the candidates");
  Phasor out{};
  for (std::size_t i = 0; i < cands.size(); ++i)
    if (weights[i] != 0.0) out += weights[i] * customer_load(cust, cands[i], t, base_kva);
  return out;
}

}  // namespace

std::vector<Phasor> pseudo_loads(const IdentificationProblem& problem, const ContextWeights& context, int t) {
  const auto& feeder = *problem.feeder;
  if (context.size() != problem.customers.size()) throw InvalidArgument("context size mismatch");
  std::vector<Phasor> loads(feeder.node_count());
  const int kind = index_of(day_kind_of(problem.start + t));
  for (std::size_t c = 0; c < problem.customers.size(); ++c) {
    const auto& cust = problem.customers[c];
    loads[cust.node] += context_load(cust, context[c][kind], kind, t, feeder.base_kva());
  }
  return loads;
}

std::vector<Phasor> pseudo_loads(const IdentificationProblem& problem, const Assignment& assignment, int t) {
  return pseudo_loads(problem, one_hot(problem, assignment), t);
}

IdentificationEntry identify_customer(const IdentificationProblem& problem, std::size_t customer, DayKind kind,
                                      const Assignment& assignment, const RblConfig& config) {
  return identify_customer(problem, customer, kind, one_hot(problem, assignment), config);
}

IdentificationEntry identify_customer(const IdentificationProblem& problem, std::size_t customer, DayKind kind,
                                      const ContextWeights& context, const RblConfig& config) {
  const auto& feeder = *problem.feeder;
  const auto& cust = problem.customers.at(customer);
  const auto& cands = cust.candidates[index_of(kind)];
  if (problem.head.size() != static_cast<std::size_t>(kHoursPerMonth))
    throw InvalidArgument("head measurements must cover the 672 hours of the month");

  IdentificationEntry entry;
  entry.customer = cust.id;
  entry.type = cust.type;
  entry.day_kind = kind;
  for (const auto& c : cands) entry.candidates.push_back(c.class_id);
  if (cands.empty()) {
    entry.error = "no candidate classes";
    return entry;
  }

  auto state = PosteriorState::uniform(cust.id, entry.candidates);
  auto finish = [&] {
    entry.posterior = state.probabilities;
    entry.iterations = state.iterations;
    entry.trajectory = state.history;
    auto best = std::max_element(state.probabilities.begin(), state.probabilities.end());
    entry.identified = entry.candidates[static_cast<std::size_t>(best - state.probabilities.begin())];
    entry.reached_threshold = *best >= config.threshold;
    return entry;
  };
  if (cands.size() == 1) return finish();

  std::vector<std::vector<std::vector<double>>> pending;  // steps awaiting Phi
  std::optional<PhiMatrix> phi;
  auto apply = [&](const std::vector<std::vector<double>>& res) {
    state = update_posterior(state, res, *phi);
    return state.iterations >= config.max_iterations ||
           *std::max_element(state.probabilities.begin(), state.probabilities.end()) >= config.threshold;
  };
  auto flush = [&] {
    std::vector<std::vector<double>> pooled;
    for (const auto& step : pending) pooled.insert(pooled.end(), step.begin(), step.end());
    phi = estimate_phi(pooled, config.phi_epsilon);
    for (const auto& step : pending)
      if (apply(step)) return true;
    return false;
  };

  const int kind_index = index_of(kind);
  for (int t = 0; t < kHoursPerMonth; ++t) {
    if (day_kind_of(problem.start + t) != kind) continue;
    auto base = pseudo_loads(problem, context, t);
    base[cust.node] -= context_load(cust, context.at(customer)[kind_index], kind_index, t, feeder.base_kva());
    std::vector<std::vector<double>> step;
    try {
      for (const auto& cand : cands) {
        auto loads = base;
        loads[cust.node] += customer_load(cust, cand, t, feeder.base_kva());
        auto ms = make_measurements(feeder, problem.head[t].voltage, problem.head[t].current, loads, config.weights);
        auto est = solve_wls(feeder, ms, config.estimator);
        auto r = head_current_residual(feeder, ms, est);
        step.push_back({r[0], r[1]});
      }
    } catch (const Error&) {
      ++entry.skipped_steps;
      continue;
    }
    if (!phi) {
      pending.push_back(std::move(step));
      if (static_cast<int>(pending.size()) >= std::max(1, config.phi_window) && flush()) return finish();
      continue;
    }
    if (apply(step)) return finish();
  }
  if (!phi && !pending.empty() && pending.size() * cands.size() >= 2) flush();
  return finish();
}

IdentificationReport identify_all(const IdentificationProblem& problem, const Assignment& assignment,
                                  const RblConfig& config) {
  return identify_all(problem, one_hot(problem, assignment), config);
}

IdentificationReport identify_all(const IdentificationProblem& problem, ContextWeights context,
                                  const RblConfig& config) {
  if (context.size() != problem.customers.size()) throw InvalidArgument("context size mismatch");
  IdentificationReport report;
  std::vector<std::array<int, 2>> identified(problem.customers.size(), {-1, -1});
  for (int pass = 1; pass <= std::max(1, config.max_passes); ++pass) {
    report.passes = pass;
    report.entries.clear();
    bool changed = false;
    for (std::size_t c = 0; c < problem.customers.size(); ++c) {
      for (auto kind : kDayKinds) {
        IdentificationEntry entry;
        try {
          entry = identify_customer(problem, c, kind, context, config);
        } catch (const Error& e) {
          entry.customer = problem.customers[c].id;
          entry.type = problem.customers[c].type;
          entry.day_kind = kind;
          entry.error = e.what();
        }
        const int k = index_of(kind);
        if (entry.identified >= 0) {
          const auto& cands = problem.customers[c].candidates[k];
          for (std::size_t i = 0; i < cands.size(); ++i) context[c][k][i] = cands[i].class_id == entry.identified;
          if (identified[c][k] != entry.identified) changed = true;
          identified[c][k] = entry.identified;
        }
        report.entries.push_back(std::move(entry));
      }
    }
    if (!changed) break;
  }
  return report;
}

namespace {
using nlohmann::json;
constexpr int kReportSchema = 1;
}  // namespace

std::string serialize_report(const IdentificationReport& report) {
  json doc;
  doc["schema_version"] = kReportSchema;
  doc["kind"] = "identification_report";
  doc["passes"] = report.passes;
  doc["entries"] = json::array();
  for (const auto& e : report.entries) {
    doc["entries"].push_back({{"customer", e.customer},
                              {"type", std::string(to_string(e.type))},
                              {"day_kind", std::string(to_string(e.day_kind))},
                              {"candidates", e.candidates},
                              {"identified", e.identified},
                              {"posterior", e.posterior},
                              {"iterations", e.iterations},
                              {"reached_threshold", e.reached_threshold},
                              {"skipped_steps", e.skipped_steps},
                              {"trajectory", e.trajectory},
                              {"error", e.error}});
  }
  return doc.dump();
}

IdentificationReport parse_report(std::string_view text) {
  try {
    auto doc = json::parse(text);
    if (doc.at("schema_version").get<int>() != kReportSchema) throw ParseError("unsupported report schema");
    IdentificationReport report;
    report.passes = doc.at("passes").get<int>();
    for (const auto& j : doc.at("entries")) {
      IdentificationEntry e;
      e.customer = j.at("customer").get<std::string>();
      e.type = parse_customer_type(j.at("type").get<std::string>());
      e.day_kind = parse_day_kind(j.at("day_kind").get<std::string>());
      e.candidates = j.at("candidates").get<std::vector<int>>();
      e.identified = j.at("identified").get<int>();
      e.posterior = j.at("posterior").get<std::vector<double>>();
      e.iterations = j.at("iterations").get<int>();
      e.reached_threshold = j.at("reached_threshold").get<bool>();
      e.skipped_steps = j.at("skipped_steps").get<int>();
      e.trajectory = j.at("trajectory").get<std::vector<std::vector<double>>>();
      e.error = j.at("error").get<std::string>();
      report.entries.push_back(std::move(e));
    }
    return report;
  } catch (const json::exception& e) {
    throw ParseError(std::string("identification report: ") + e.what());
  }
}

void save_report(const IdentificationReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << serialize_report(report) << '\n';
}

IdentificationReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_report(buf.str());
}

void write_trajectories(const IdentificationReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  out << "customer,day_kind,iteration,class_id,probability\n";
  for (const auto& e : report.entries)
    for (std::size_t o = 0; o < e.trajectory.size(); ++o)
      for (std::size_t i = 0; i < e.candidates.size() && i < e.trajectory[o].size(); ++i)
        out << e.customer << ',' << to_string(e.day_kind) << ',' << o << ',' << e.candidates[i] << ','
            << e.trajectory[o][i] << '\n';
}

}  // namespace gridobs
