#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "gridobs/metrics.hpp"
#include "support.hpp"

using namespace gridobs;

TEST_CASE("MAPE") {
  std::vector<double> a{100, 200}, e{110, 180};
  CHECK(mape(a, e).value == doctest::Approx(10.0).epsilon(1e-14));
  CHECK(mape(a, a).value == 0.0);
  std::vector<double> a3, e3;
  for (double v : a) a3.push_back(3.0 * v);
  for (double v : e) e3.push_back(3.0 * v);
  CHECK(mape(a3, e3).value == doctest::Approx(10.0));
}

TEST_CASE("MAPE skips zero actuals and rejects degenerate input") {
  std::vector<double> a{0, 50}, e{4, 55};
  auto m = mape(a, e);
  CHECK(m.value == doctest::Approx(10.0));
  CHECK(m.samples == 1);
  CHECK(m.excluded == 1);
  std::vector<double> zeros{0, 0};
  CHECK_THROWS_AS(mape(zeros, e), InvalidArgument);
  std::vector<double> shorter{1};
  CHECK_THROWS_AS(mape(shorter, e), InvalidArgument);
}

TEST_CASE("goodness of fit") {
  std::vector<double> a{1, 4, 2, 8, 5}, neg;
  for (double v : a) neg.push_back(-v);
  CHECK(goodness_r(a, a) == doctest::Approx(1.0));
  CHECK(goodness_r(a, neg) == doctest::Approx(-1.0));
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n;
  std::vector<double> x(1000), y(1000);
  for (auto& v : x) v = n(rng);
  for (auto& v : y) v = n(rng);
  CHECK(std::abs(goodness_r(x, y)) < 0.1);
  std::vector<double> flat(5, 1.0);
  CHECK_THROWS_AS(goodness_r(a, flat), NumericalError);
}

TEST_CASE("adjusted Rand index") {
  std::vector<int> a{0, 0, 1, 1, 2, 2}, relabelled{5, 5, 3, 3, 9, 9};
  CHECK(adjusted_rand_index(a, relabelled) == doctest::Approx(1.0));
  // Classic example: contingency [[1,1],[1,1]] gives ARI -0.5.
  std::vector<int> x{0, 0, 1, 1}, y{0, 1, 0, 1};
  CHECK(adjusted_rand_index(x, y) == doctest::Approx(-0.5));
  std::vector<int> shorter{0};
  CHECK_THROWS_AS(adjusted_rand_index(x, shorter), InvalidArgument);
}

TEST_CASE("uniform baseline") {
  auto ones = baseline_uniform(672.0);
  REQUIRE(ones.size() == static_cast<std::size_t>(kHoursPerMonth));
  for (double v : ones) CHECK(v == 1.0);
  for (double v : baseline_uniform(0.0)) CHECK(v == 0.0);
  auto odd = baseline_uniform(1234.567);
  CHECK(std::accumulate(odd.begin(), odd.end(), 0.0) == doctest::Approx(1234.567).epsilon(1e-13));
  CHECK_THROWS_AS(baseline_uniform(-1.0), InvalidArgument);
}

TEST_CASE("profile-scaling baseline") {
  Profile24 flat;
  flat.fill(1.0 / 24.0);
  auto a = baseline_profile_scaling(999.0, flat);
  auto b = baseline_uniform(999.0);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-14));

  Profile24 peaky{};
  double sum = 0.0;
  for (int h = 0; h < 24; ++h) sum += (peaky[h] = 1.0 + (h == 18 ? 5.0 : 0.0));
  for (auto& v : peaky) v /= sum;
  auto c = baseline_profile_scaling(500.0, peaky);
  CHECK(std::accumulate(c.begin(), c.end(), 0.0) == doctest::Approx(500.0).epsilon(1e-13));
  CHECK(c[18] > c[17]);

  Profile24 bad{};
  bad[0] = 2.0;
  CHECK_THROWS_AS(baseline_profile_scaling(1.0, bad), InvalidArgument);
}

TEST_CASE("metrics report round trip") {
  MetricsReport r;
  r.estimators["mtsl"]["feeder_weekday"] = {MapeResult{3.5, 480, 0}, 0.98};
  r.estimators["uniform"]["customer_all"] = {std::nullopt, std::nullopt};
  r.clustering_ari["residential_weekday"] = 1.0;
  r.identification_accuracy = 0.5;
  r.voltage_magnitude_error = 0.1;
  r.extra["x"] = 2.0;
  auto text = serialize_metrics(r);
  CHECK(serialize_metrics(parse_metrics(text)) == text);
  gridobs::testing::TempDir dir("metrics_rt");
  save_metrics(r, dir.path() / "m.json");
  CHECK(serialize_metrics(load_metrics(dir.path() / "m.json")) == text);
  CHECK_THROWS_AS(parse_metrics("{\"schema_version\": 7}"), ParseError);
}
