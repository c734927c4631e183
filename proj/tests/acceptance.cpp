// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 when any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "gridobs/bcse.hpp"
#include "gridobs/metrics.hpp"
#include "gridobs/mtsl.hpp"
#include "gridobs/pipeline.hpp"
#include "gridobs/rbl.hpp"
#include "gridobs/regressor.hpp"
#include "gridobs/spectral.hpp"
#include "support.hpp"

using namespace gridobs;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// ---- 1 ----------------------------------------------------------------------

Verdict clustering_recovery() {
  const auto t0 = Clock::now();
  PopulationSpec spec;
  spec.counts = {200, 4, 4};
  spec.months = 2;
  spec.noise = 0.05;
  spec.seed = 2024;
  auto recs = generate_population(spec);
  auto all = partition_subsets(recs);
  std::vector<DataSubset> residential{all[subset_slot(CustomerType::Residential, DayKind::Weekday)],
                                      all[subset_slot(CustomerType::Residential, DayKind::Weekend)]};
  auto bank = build_pattern_bank(residential, SpectralOptions{}, 7);

  std::map<std::string, const CustomerRecord*> by_id;
  for (const auto& r : recs) by_id[r.id] = &r;
  bool ok = true;
  std::string detail;
  for (auto [kind, planted_k] : {std::pair{DayKind::Weekday, 4}, std::pair{DayKind::Weekend, 6}}) {
    const auto& s = bank.find(CustomerType::Residential, kind);
    std::vector<int> disc, plant;
    for (const auto& c : s.classes)
      for (const auto& id : c.members) {
        disc.push_back(c.id);
        plant.push_back(*by_id.at(id)->true_class(kind));
      }
    const double ari = adjusted_rand_index(disc, plant);
    ok = ok && s.k == planted_k && ari >= 0.9;
    detail += std::string(to_string(kind)) + " k=" + std::to_string(s.k) + "/" + std::to_string(planted_k) +
              " ARI=" + fmt(ari) + "; ";
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 60.0;
  return {ok, detail + "runtime " + fmt(secs, 3) + " s"};
}

// ---- 2 ----------------------------------------------------------------------

using LMatrix = std::vector<std::vector<long double>>;

long double dist2(const Matrix& p, Eigen::Index i, Eigen::Index j) {
  long double s = 0;
  for (Eigen::Index c = 0; c < p.cols(); ++c) {
    long double d = static_cast<long double>(p(i, c)) - p(j, c);
    s += d * d;
  }
  return s;
}

std::vector<long double> brute_scales(const Matrix& p, int rank) {
  std::vector<long double> out;
  long double diameter = 0;
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = 0; j < p.rows(); ++j) diameter = std::max(diameter, std::sqrt(dist2(p, i, j)));
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    std::vector<long double> d;
    for (Eigen::Index j = 0; j < p.rows(); ++j)
      if (j != i) d.push_back(std::sqrt(dist2(p, i, j)));
    std::sort(d.begin(), d.end());
    out.push_back(std::max(d[rank - 1], 1e-9L * diameter));
  }
  return out;
}

long double brute_dbi(const Matrix& p, const std::vector<int>& labels, int k) {
  std::vector<std::vector<long double>> cent(k, std::vector<long double>(p.cols(), 0));
  std::vector<int> n(k, 0);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    ++n[labels[i]];
    for (Eigen::Index c = 0; c < p.cols(); ++c) cent[labels[i]][c] += p(i, c);
  }
  for (int a = 0; a < k; ++a)
    for (auto& v : cent[a]) v /= n[a];
  std::vector<long double> scatter(k, 0);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    long double s = 0;
    for (Eigen::Index c = 0; c < p.cols(); ++c) s += (p(i, c) - cent[labels[i]][c]) * (p(i, c) - cent[labels[i]][c]);
    scatter[labels[i]] += std::sqrt(s) / n[labels[i]];
  }
  long double total = 0;
  for (int a = 0; a < k; ++a) {
    long double worst = 0;
    for (int b = 0; b < k; ++b) {
      if (a == b) continue;
      long double s = 0;
      for (Eigen::Index c = 0; c < p.cols(); ++c) s += (cent[a][c] - cent[b][c]) * (cent[a][c] - cent[b][c]);
      worst = std::max(worst, (scatter[a] + scatter[b]) / std::sqrt(s));
    }
    total += worst;
  }
  return total / k;
}

Verdict oracle_agreement() {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<int> dims(2, 24);
  double worst_scale = 0, worst_w = 0, worst_l = 0, worst_dbi = 0;
  for (int inst = 0; inst < 50; ++inst) {
    Matrix p(20, dims(rng));
    for (Eigen::Index i = 0; i < p.rows(); ++i)
      for (Eigen::Index c = 0; c < p.cols(); ++c) p(i, c) = g(rng) + 3.0 * (i % 3);
    const int rank = 1 + inst % 7;

    auto alphas = local_scales(p, rank);
    auto ref_alphas = brute_scales(p, rank);
    for (std::size_t i = 0; i < alphas.size(); ++i)
      worst_scale = std::max(worst_scale, static_cast<double>(std::abs(alphas[i] - ref_alphas[i]) / ref_alphas[i]));

    auto graph = build_affinity(p, alphas);
    LMatrix w(20, std::vector<long double>(20, 0));
    std::vector<long double> deg(20, 0);
    for (int i = 0; i < 20; ++i)
      for (int j = 0; j < 20; ++j) {
        if (i != j) w[i][j] = std::exp(-dist2(p, i, j) / (static_cast<long double>(alphas[i]) * alphas[j]));
        deg[i] += w[i][j];
      }
    for (int i = 0; i < 20; ++i)
      for (int j = 0; j < 20; ++j) {
        worst_w = std::max(worst_w, static_cast<double>(std::abs(graph.weights(i, j) - w[i][j])));
        const long double l = w[i][j] / std::sqrt(deg[i] * deg[j]);
        worst_l = std::max(worst_l, static_cast<double>(std::abs(graph.laplacian(i, j) - l)));
      }

    const int k = 2 + inst % 4;
    std::vector<int> labels(20);
    for (int i = 0; i < 20; ++i) labels[i] = i % k;
    std::shuffle(labels.begin(), labels.end(), rng);
    const long double ref = brute_dbi(p, labels, k);
    worst_dbi = std::max(worst_dbi, static_cast<double>(std::abs(davies_bouldin(p, labels) - ref) / ref));
  }

  // Block-diagonal affinities with c connected blocks: eigenvalue 1 appears
  // exactly c times.
  bool multiplicity_ok = true;
  std::uniform_real_distribution<double> u(0.1, 1.0);
  for (int c = 1; c <= 6; ++c) {
    const int size = 4;
    const int n = c * size;
    Matrix w = Matrix::Zero(n, n);
    for (int b = 0; b < c; ++b)
      for (int i = 0; i < size; ++i)
        for (int j = i + 1; j < size; ++j) w(b * size + i, b * size + j) = w(b * size + j, b * size + i) = u(rng);
    Eigen::SelfAdjointEigenSolver<Matrix> es(normalized_laplacian(w));
    int ones = 0;
    for (Eigen::Index i = 0; i < n; ++i)
      if (std::abs(es.eigenvalues()(i) - 1.0) < 1e-10) ++ones;
    multiplicity_ok = multiplicity_ok && ones == c && es.eigenvalues()(n - 1 - c) < 1.0 - 1e-3;
  }

  const bool ok = worst_scale < 1e-12 && worst_w < 1e-12 && worst_l < 1e-12 && worst_dbi < 1e-12 && multiplicity_ok;
  return {ok, "max deviation: scales " + fmt(worst_scale) + ", W " + fmt(worst_w) + ", L " + fmt(worst_l) +
                  ", DBI " + fmt(worst_dbi) + "; component multiplicity " + (multiplicity_ok ? "exact" : "wrong")};
}

// ---- shared end-to-end run --------------------------------------------------

struct SharedRun {
  fs::path dir;
  RunSummary summary;
};

const ScopeMetrics& scope(const MetricsReport& m, const std::string& est, const std::string& sc) {
  return m.estimators.at(est).at(sc);
}

Verdict mtsl_fidelity(const SharedRun& run) {
  const auto& m = run.summary.metrics;
  auto mape_of = [&](const char* est, const char* sc) { return scope(m, est, sc).mape->value; };
  const double wd = mape_of("mtsl", "feeder_weekday"), we = mape_of("mtsl", "feeder_weekend");
  const double secs = run.summary.seconds.at("train-mtsl");
  bool ok = wd <= 12.0 && we <= 15.0 && secs < 600.0;
  for (const char* base : {"uniform", "profile_scaling"})
    ok = ok && wd < mape_of(base, "feeder_weekday") && we < mape_of(base, "feeder_weekend");
  return {ok, "feeder hourly MAPE weekday " + fmt(wd) + "% weekend " + fmt(we) + "% (uniform " +
                  fmt(mape_of("uniform", "feeder_weekday")) + "/" + fmt(mape_of("uniform", "feeder_weekend")) +
                  ", profile scaling " + fmt(mape_of("profile_scaling", "feeder_weekday")) + "/" +
                  fmt(mape_of("profile_scaling", "feeder_weekend")) + "); per-customer " +
                  fmt(mape_of("mtsl", "customer_weekday")) + "/" + fmt(mape_of("mtsl", "customer_weekend")) +
                  "%; training " + fmt(secs, 3) + " s"};
}

// ---- 4 ----------------------------------------------------------------------

Verdict energy_conservation(const SharedRun& run) {
  std::vector<MtslModel> models;
  for (const auto& entry : fs::directory_iterator(run.dir / "models")) models.push_back(load_model(entry.path()));
  if (models.empty()) return {false, "no trained models"};
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> energy(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, models.size() - 1);
  int failures = 0;
  double worst = 0.0;
  auto check = [&](double sum, double target) {
    const double rel = std::abs(sum - target) / std::max(target, 1e-300);
    worst = std::max(worst, target > 0 ? rel : std::abs(sum));
    if (target > 0 ? rel > 1e-9 : sum != 0.0) ++failures;
  };
  for (int i = 0; i < 1000; ++i) {
    const auto& model = models[pick(rng)];
    const double scale = model.reference_energy > 0 ? model.reference_energy : 1000.0;
    const double bill_kwh = i % 100 == 0 ? 0.0 : scale * std::pow(10.0, 2.0 * energy(rng) - 1.0);
    auto d = disaggregate(model, {"X", 0, make_hour_stamp(2018, 1, 1), bill_kwh});
    check(std::accumulate(d.weekly.begin(), d.weekly.end(), 0.0), bill_kwh);
    for (int w = 0; w < kWeeksPerMonth; ++w)
      check(std::accumulate(d.daily.begin() + w * kDaysPerWeek, d.daily.begin() + (w + 1) * kDaysPerWeek, 0.0),
            d.weekly[w]);
    for (int day = 0; day < kDaysPerMonth; ++day)
      check(std::accumulate(d.hourly.begin() + day * kHoursPerDay, d.hourly.begin() + (day + 1) * kHoursPerDay, 0.0),
            d.daily[day]);
    check(std::accumulate(d.hourly.begin(), d.hourly.end(), 0.0), bill_kwh);
  }
  return {failures == 0, "1000 bills over " + std::to_string(models.size()) + " models, " +
                             std::to_string(failures) + " failures, max relative deviation " + fmt(worst)};
}

// ---- 5 ----------------------------------------------------------------------

Verdict gradient_check() {
  double worst = 0.0;
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> inputs(1, 3), hidden(2, 16), rows(1, 12);
  for (int draw = 0; draw < 100; ++draw) {
    Regressor r(inputs(rng), hidden(rng));
    r.initialize(rng);
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::MatrixXd xs(rows(rng), r.input_width());
    Eigen::VectorXd ys(xs.rows());
    for (Eigen::Index i = 0; i < xs.rows(); ++i) {
      for (Eigen::Index c = 0; c < xs.cols(); ++c) xs(i, c) = g(rng);
      ys(i) = g(rng);
    }
    Eigen::VectorXd grad;
    r.loss_and_gradient(xs, ys, &grad);
    const Eigen::VectorXd theta = r.parameters();
    for (Eigen::Index k = 0; k < theta.size(); ++k) {
      const double h = 1e-6;
      Eigen::VectorXd p = theta, m = theta;
      p(k) += h;
      m(k) -= h;
      r.set_parameters(p);
      const double lp = r.loss_and_gradient(xs, ys, nullptr);
      r.set_parameters(m);
      const double lm = r.loss_and_gradient(xs, ys, nullptr);
      const double fd = (lp - lm) / (2 * h);
      worst = std::max(worst, std::abs(fd - grad(k)) / std::max(1e-8, std::abs(fd) + std::abs(grad(k))));
    }
    r.set_parameters(theta);
  }
  return {worst < 1e-5, "100 draws, max relative error " + fmt(worst)};
}

// ---- 6 ----------------------------------------------------------------------

Verdict bcse_oracle() {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> size(3, 30);
  double worst_current = 0.0, worst_jac = 0.0;
  int worst_iters = 0, total_iters = 0, halvings = 0, not_converged = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto rf = testing::random_feeder(rng, size(rng));
    const auto& f = rf.feeder;
    auto pf = power_flow(f, rf.loads, {1.0, 0.0});
    auto ms = make_measurements(f, {1.0, 0.0}, head_current(f, pf.branch_currents), rf.loads, WeightConfig{});
    auto r = solve_wls(f, ms, EstimatorConfig{});
    if (!r.converged) ++not_converged;
    worst_iters = std::max(worst_iters, r.iterations);
    total_iters += r.iterations;
    halvings += r.halvings;
    auto est = state_currents(r.x);
    for (std::size_t b = 0; b < f.branch_count(); ++b)
      worst_current = std::max(worst_current, std::abs(est[b] - pf.branch_currents[b]));

    const auto nx = static_cast<Eigen::Index>(2 * f.branch_count());
    Eigen::VectorXd x = state_from_currents(pf.branch_currents) + 0.01 * Eigen::VectorXd::Random(nx);
    auto model = measurement_model(f, ms, x, {1.0, 0.0});
    for (Eigen::Index k = 0; k < nx; ++k) {
      const double h = 1e-6;
      Eigen::VectorXd p = x, q = x;
      p(k) += h;
      q(k) -= h;
      Eigen::VectorXd fd =
          (measurement_model(f, ms, p, {1.0, 0.0}).h - measurement_model(f, ms, q, {1.0, 0.0}).h) / (2 * h);
      worst_jac = std::max(worst_jac, (fd - model.H.col(k)).lpNorm<Eigen::Infinity>());
    }
  }
  const bool ok = not_converged == 0 && worst_current < 1e-4 && worst_jac < 1e-6 && worst_iters <= 10;
  return {ok, "100 feeders, max current error " + fmt(worst_current) + " pu, Jacobian deviation " + fmt(worst_jac) +
                  ", max iterations " + std::to_string(worst_iters) + ", halvings " + std::to_string(halvings) +
                  "/" + std::to_string(total_iters) + " iterations"};
}

// ---- 7 ----------------------------------------------------------------------

Verdict estimation_accuracy(const SharedRun& run) {
  const auto& m = run.summary.metrics;
  const double mag = m.extra.at("planted_voltage_magnitude_error");
  const double phase = m.extra.at("planted_voltage_phase_error");
  const double halving = m.extra.at("planted_halving_fraction");
  const double secs = run.summary.seconds.at("estimate");
  const bool ok = mag <= 1.5 && phase <= 0.5 && secs < 300.0 && m.extra.at("planted_estimated_steps") == 672.0;
  return {ok, "planted classes: magnitude " + fmt(mag) + "%, phase " + fmt(phase) + "% over " +
                  fmt(m.extra.at("planted_estimated_steps")) + " steps; identified classes: magnitude " +
                  fmt(m.extra.at("identified_voltage_magnitude_error")) + "%, phase " +
                  fmt(m.extra.at("identified_voltage_phase_error")) + "%; halving fraction " + fmt(halving) +
                  "; estimate stage " + fmt(secs, 3) + " s"};
}

// ---- 8 ----------------------------------------------------------------------

Verdict identification(const SharedRun& run) {
  const auto& m = run.summary.metrics;
  const double acc = m.identification_accuracy.value_or(0.0);
  const double conf = m.identification_confident.value_or(0.0);
  auto report = load_report(run.dir / "identification.json");
  int max_iters = 0;
  for (const auto& e : report.entries) max_iters = std::max(max_iters, e.iterations);

  auto s = PosteriorState::uniform("example", {1, 2});
  std::vector<std::vector<double>> residuals{{0.0}, {2.0}};
  const double p = update_posterior(s, residuals, PhiMatrix{{1.0}}).probabilities[0];
  const double example_error = std::abs(p - 0.880797077977882444);

  const bool ok = acc >= 0.9 && conf >= 0.8 && max_iters <= 200 && example_error < 1e-9;
  std::string detail = "accuracy " + fmt(acc) + ", true class at >= 0.99 " + fmt(conf) + ", max iterations " +
                       std::to_string(max_iters) + ", two-class example " + fmt(p, 12);
  if (m.extra.count("planted_context_identification_accuracy"))
    detail += "; with other customers held at their planted classes: accuracy " +
              fmt(m.extra.at("planted_context_identification_accuracy")) + ", confident " +
              fmt(m.extra.at("planted_context_identification_confident"));
  return {ok, detail};
}

// ---- 9 ----------------------------------------------------------------------

Verdict determinism(const SharedRun& run, const ExperimentConfig& config, const fs::path& work) {
  const auto second = work / "run_b";
  fs::remove_all(second);
  run_all(config, second);
  const bool same = slurp(run.dir / "metrics.json") == slurp(second / "metrics.json");
  const bool ids_same = slurp(run.dir / "identification.json") == slurp(second / "identification.json");
  return {same && ids_same, std::string("metrics reports ") + (same ? "identical" : "differ") +
                                ", identification reports " + (ids_same ? "identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string work = "acceptance_work";
  app.add_option("--work", work, "Scratch directory for the end-to-end runs");
  CLI11_PARSE(app, argc, argv);

  int failed = 0;
  auto report = [&](int id, const char* name, const std::function<Verdict()>& fn) {
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    if (!v.pass) ++failed;
    std::cout << (v.pass ? "PASS" : "FAIL") << "  " << id << ". " << name << ": " << v.detail << std::endl;
  };

  report(1, "clustering recovery", clustering_recovery);
  report(2, "DBI, affinity and Laplacian oracles", oracle_agreement);

  const auto config = default_config();
  SharedRun run{fs::path(work) / "run_a", {}};
  std::string run_error;
  try {
    fs::remove_all(run.dir);
    run.summary = run_all(config, run.dir);
  } catch (const std::exception& e) {
    run_error = e.what();
  }
  auto needs_run = [&](const std::function<Verdict()>& fn) {
    return [&, fn] { return run_error.empty() ? fn() : Verdict{false, "run-all failed: " + run_error}; };
  };

  report(3, "MTSL fidelity", needs_run([&] { return mtsl_fidelity(run); }));
  report(4, "energy conservation", needs_run([&] { return energy_conservation(run); }));
  report(5, "gradient check", gradient_check);
  report(6, "BCSE oracle equivalence", bcse_oracle);
  report(7, "state-estimation accuracy", needs_run([&] { return estimation_accuracy(run); }));
  report(8, "RBL identification", needs_run([&] { return identification(run); }));
  report(9, "determinism", needs_run([&] { return determinism(run, config, work); }));

  std::cout << (9 - failed) << "/9 criteria pass" << std::endl;
  return failed == 0 ? 0 : 1;
}
