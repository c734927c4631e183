#include <fstream>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "gridobs/cli.hpp"
#include "gridobs/pipeline.hpp"
#include "support.hpp"

using namespace gridobs;
namespace fs = std::filesystem;

namespace {

constexpr const char* kSmallConfig = R"({
  "seed": 5,
  "population": {"counts": {"residential": 60, "commercial": 24, "industrial": 16}, "months": 5},
  "mtsl": {"max_epochs": 30}
})";

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// One small run-all shared by the test cases below.
struct SmallRun {
  testing::TempDir tmp{"gridobs_pipeline"};
  fs::path config = tmp.path() / "small.json";
  fs::path out = tmp.path() / "run";
  CliResult result;

  SmallRun() {
    std::ofstream(config) << kSmallConfig;
    result = cli({"run-all", "--config", config.string(), "--out", out.string()});
  }
};

SmallRun& small_run() {
  static SmallRun run;
  return run;
}

}  // namespace

TEST_CASE("CLI usage errors and help") {
  CHECK(cli({}).code == 1);
  CHECK(cli({"frobnicate"}).code == 1);
  CHECK(cli({"cluster", "--bogus"}).code == 1);
  auto help = cli({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("run-all") != std::string::npos);
  CHECK(cli({"cluster", "--config", "/nonexistent/config.json"}).code == 1);

  testing::TempDir tmp("gridobs_cli");
  auto bad = tmp.path() / "bad.json";
  std::ofstream(bad) << R"({"population": {"months": 2}})";
  auto r = cli({"gen-data", "--config", bad.string(), "--out", tmp.path().string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("seed") != std::string::npos);
}

TEST_CASE("a stage without its inputs is a runtime failure") {
  testing::TempDir tmp("gridobs_empty");
  for (const char* stage : {"cluster", "train-mtsl", "identify", "estimate", "evaluate", "disaggregate"}) {
    auto r = cli({stage, "--out", tmp.path().string()});
    CHECK_MESSAGE(r.code == 2, stage);
    CHECK(r.err.find("error:") != std::string::npos);
  }
}

TEST_CASE("estimate --feeder requires --measurements") {
  testing::TempDir tmp("gridobs_est");
  auto r = cli({"estimate", "--feeder", "x.json", "--out", tmp.path().string()});
  CHECK(r.code == 1);
}

TEST_CASE("run-all writes the full artifact set") {
  auto& run = small_run();
  INFO(run.result.err);
  REQUIRE(run.result.code == 0);
  for (const char* f : {"observed.csv", "feeder_customers_truth.csv", "truth.json", "bills.csv", "head_pmu.csv",
                        "true_voltages.csv", "config_used.json", "bank.json", "dbi_curve.csv", "typical_profiles.csv",
                        "mtsl_layer_metrics.csv", "timescale_correlation.csv", "identification.json",
                        "posterior_trajectories.csv", "identification_planted_context.json", "se_measurements.csv",
                        "se_states.csv", "se_voltages.csv", "se_residuals.csv", "se_log.csv", "metrics.json"})
    CHECK_MESSAGE(fs::exists(run.out / f), f);
  CHECK(fs::is_directory(run.out / "models"));
  CHECK_FALSE(fs::is_empty(run.out / "models"));

  auto m = load_metrics(run.out / "metrics.json");
  CHECK(m.clustering_ari.size() == 6);
  REQUIRE(m.estimators.count("mtsl"));
  REQUIRE(m.estimators.count("uniform"));
  REQUIRE(m.estimators.count("profile_scaling"));
  CHECK(m.estimators.at("mtsl").at("feeder_weekday").mape.has_value());
  CHECK(m.identification_accuracy.has_value());
  REQUIRE(m.voltage_magnitude_error.has_value());
  CHECK(*m.voltage_magnitude_error < 1.0);

  auto used = load_config((run.out / "config_used.json").string());
  CHECK(used.seed == 5);
  CHECK(used.population.months == 5);
}

TEST_CASE("rerunning the late stages reproduces the metrics") {
  auto& run = small_run();
  REQUIRE(run.result.code == 0);
  const auto before = slurp(run.out / "metrics.json");
  for (const char* stage : {"identify", "estimate", "evaluate"})
    REQUIRE(cli({stage, "--config", run.config.string(), "--out", run.out.string()}).code == 0);
  CHECK(slurp(run.out / "metrics.json") == before);
}

TEST_CASE("disaggregate and standalone estimate on a finished run") {
  auto& run = small_run();
  REQUIRE(run.result.code == 0);
  CHECK(cli({"disaggregate", "--config", run.config.string(), "--out", run.out.string()}).code == 0);

  testing::TempDir tmp("gridobs_standalone");
  auto cfg = load_config(run.config.string());
  auto r = cli({"estimate", "--feeder", cfg.feeder.string(), "--measurements",
                (run.out / "se_measurements.csv").string(), "--out", tmp.path().string()});
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(slurp(tmp.path() / "se_voltages.csv") == slurp(run.out / "se_voltages.csv"));
}

TEST_CASE("measurement CSV round trip") {
  testing::TempDir tmp("gridobs_meas");
  std::vector<MeasurementStep> steps(2);
  steps[0] = {0, parse_iso8601("2023-01-01T00:00"),
              {{MeasurementKind::HeadVoltage, 0, {1.0, -0.001}, 1e6},
               {MeasurementKind::NodeP, 7, {0.0123456789012345, 0.0}, 17.5}}};
  steps[1] = {3, parse_iso8601("2023-01-01T01:00"), {{MeasurementKind::HeadCurrent, 0, {0.1 / 3.0, -0.02}, 2.0}}};
  write_measurements(tmp.path() / "m.csv", steps);
  auto back = read_measurements(tmp.path() / "m.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[1].step == 3);
  CHECK(back[1].time == steps[1].time);
  REQUIRE(back[0].measurements.size() == 2);
  CHECK(back[0].measurements[1].kind == MeasurementKind::NodeP);
  CHECK(back[0].measurements[1].location == 7);
  CHECK(back[0].measurements[1].value == steps[0].measurements[1].value);
  CHECK(back[0].measurements[1].weight == 17.5);
  CHECK(back[1].measurements[0].value == steps[1].measurements[0].value);

  std::ofstream(tmp.path() / "split.csv") << "step,time,kind,location,re,im,weight\n"
                                          << "0,2023-01-01T00:00,node_p,1,0.1,0,1\n"
                                          << "1,2023-01-01T01:00,node_p,1,0.1,0,1\n"
                                          << "0,2023-01-01T00:00,node_q,1,0.1,0,1\n";
  CHECK_THROWS_AS(read_measurements(tmp.path() / "split.csv"), ParseError);
}

TEST_CASE("truth round trip") {
  testing::TempDir tmp("gridobs_truth");
  PlantedTruth t;
  t.observed = {{"R001", {0, 1}}, {"C002", {2, 0}}};
  t.feeder_customers = {{"F001", {1, 1}}};
  save_truth(t, tmp.path() / "truth.json");
  auto back = load_truth(tmp.path() / "truth.json");
  CHECK(back.observed == t.observed);
  CHECK(back.feeder_customers == t.feeder_customers);
  std::ofstream(tmp.path() / "bad.json") << R"({"schema_version": 2})";
  CHECK_THROWS_AS(load_truth(tmp.path() / "bad.json"), ParseError);
}

TEST_CASE("voltage errors") {
  auto feeder = FeederModel::create({{0, 0, 0, {}}, {1, 0, 0, {}}, {2, 0, 0, {}}}, {{0, 1, 0.01, 0.01}, {1, 2, 0.01, 0.01}},
                                    0, 1000.0, 12.47);
  const std::vector<Phasor> truth{{1.0, 0.0}, std::polar(0.98, -0.01), std::polar(0.96, -0.02)};
  auto e0 = voltage_errors(feeder, {truth}, {truth});
  CHECK(e0.magnitude == 0.0);
  CHECK(e0.phase == 0.0);
  CHECK(e0.samples == 2);

  // Scaled magnitudes and a common rotation: 1% magnitude error, no phase error.
  const Phasor rot = std::polar(1.01, 0.3);
  std::vector<Phasor> est;
  for (auto v : truth) est.push_back(v * rot);
  auto e1 = voltage_errors(feeder, {est}, {truth});
  CHECK(e1.magnitude == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(e1.phase == doctest::Approx(0.0).epsilon(1e-9));

  // Angles 10% too large at both nodes.
  std::vector<Phasor> wide{truth[0], std::polar(0.98, -0.011), std::polar(0.96, -0.022)};
  CHECK(voltage_errors(feeder, {wide}, {truth}).phase == doctest::Approx(10.0).epsilon(1e-9));

  CHECK_THROWS_AS(voltage_errors(feeder, {truth, truth}, {truth}), InvalidArgument);
}

TEST_CASE("planted to discovered mapping") {
  SubsetPatterns s;
  s.day_kind = DayKind::Weekend;
  s.classes.resize(3);
  s.classes[0].id = 0;
  s.classes[0].members = {"a", "b", "c"};
  s.classes[1].id = 1;
  s.classes[1].members = {"d", "e"};
  s.classes[2].id = 2;
  s.classes[2].members = {"f", "g", "h", "i"};
  // Planted weekend labels: 0,0,1 | 0,0 | 2,2,2,0
  std::map<std::string, std::array<int, 2>> planted{{"a", {9, 0}}, {"b", {9, 0}}, {"c", {9, 1}},
                                                    {"d", {9, 0}}, {"e", {9, 0}}, {"f", {9, 2}},
                                                    {"g", {9, 2}}, {"h", {9, 2}}, {"i", {9, 0}}};
  auto d2p = discovered_to_planted(s, planted);
  CHECK(d2p == std::map<int, int>{{0, 0}, {1, 0}, {2, 2}});
  auto p2d = planted_to_discovered(s, planted);
  CHECK(p2d == std::map<int, int>{{0, 0}, {2, 2}});
}
