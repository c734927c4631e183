#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "gridobs/metrics.hpp"
#include "gridobs/mtsl.hpp"
#include "support.hpp"

using namespace gridobs;

namespace {

const HourStamp kStart = make_hour_stamp(2018, 1, 1);

CustomerRecord constant_customer(const std::string& id, double kwh, int months) {
  CustomerRecord r;
  r.id = id;
  for (int t = 0; t < months * kHoursPerMonth; ++t) {
    r.hours.push_back(kStart + t);
    r.kwh.push_back(kwh);
  }
  return r;
}

std::vector<const CustomerRecord*> pointers(const std::vector<CustomerRecord>& recs) {
  std::vector<const CustomerRecord*> out;
  for (const auto& r : recs) out.push_back(&r);
  return out;
}

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.hidden = 8;
  cfg.max_epochs = 80;
  cfg.patience = 15;
  cfg.seed = 3;
  return cfg;
}

// Noiseless customers of one planted residential class, differing only in scale.
struct PlantedClass {
  PopulationSpec spec;
  std::vector<CustomerRecord> a, b;
};

PlantedClass planted_classes() {
  PlantedClass p;
  p.spec.months = 3;
  p.spec.noise = 0.0;
  p.spec.seed = 17;
  ClassLibrary lib(p.spec);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> scale(0.6, 1.6);
  for (int i = 0; i < 12; ++i) {
    p.a.push_back(generate_customer(lib, p.spec, "A" + std::to_string(i), CustomerType::Residential, 0, 0,
                                    scale(rng), static_cast<std::uint64_t>(i)));
    p.b.push_back(generate_customer(lib, p.spec, "B" + std::to_string(i), CustomerType::Residential, 3, 3,
                                    scale(rng), static_cast<std::uint64_t>(100 + i)));
  }
  return p;
}

bool training_month(const MonthWindow& w) { return w.index < 2; }

}  // namespace

TEST_CASE("constant-load training pairs") {
  std::vector<CustomerRecord> recs{constant_customer("C", 1.0, 1)};
  auto sets = build_training_sets(pointers(recs), MonthAlignment::Blocks);
  CHECK(sets.months == 1);
  for (int w = 0; w < kWeeksPerMonth; ++w) {
    CHECK(sets.weekly[w].inputs(0, 0) == 672.0);
    CHECK(sets.weekly[w].targets(0) == 168.0);
  }
  CHECK(sets.weekly[0].inputs(0, 1) == 0.0);
  CHECK(sets.weekly[1].inputs(0, 1) == 168.0);
  for (int d = 0; d < kDaysPerWeek; ++d) CHECK(sets.daily[d].targets.isConstant(24.0));
  CHECK(sets.daily[0].inputs.col(1).isZero());
  for (int k = 0; k < 2; ++k)
    for (int h = 0; h < kHoursPerDay; ++h) {
      CHECK(sets.hourly[k][h].targets.isConstant(1.0));
      CHECK(sets.hourly[k][h].inputs.col(0).isConstant(24.0));
    }
  CHECK(sets.hourly[0][0].targets.size() == 20);
  CHECK(sets.hourly[1][0].targets.size() == 8);
}

TEST_CASE("training targets match an independent summation") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  std::vector<CustomerRecord> recs{constant_customer("R", 0.0, 2)};
  for (auto& v : recs[0].kwh) v = u(rng);
  auto sets = build_training_sets(pointers(recs), MonthAlignment::Blocks);
  for (int m = 0; m < 2; ++m)
    for (int w = 0; w < kWeeksPerMonth; ++w) {
      long double week = 0.0L, month = 0.0L;
      for (int t = 0; t < kHoursPerMonth; ++t) month += recs[0].kwh[m * kHoursPerMonth + t];
      for (int t = 0; t < 168; ++t) week += recs[0].kwh[m * kHoursPerMonth + w * 168 + t];
      CHECK(sets.weekly[w].targets(m) == doctest::Approx(static_cast<double>(week)).epsilon(1e-13));
      CHECK(sets.weekly[w].inputs(m, 0) == doctest::Approx(static_cast<double>(month)).epsilon(1e-13));
    }
}

TEST_CASE("a member without a complete month is rejected") {
  auto short_rec = constant_customer("S", 1.0, 1);
  short_rec.hours.resize(100);
  short_rec.kwh.resize(100);
  std::vector<CustomerRecord> recs{short_rec};
  CHECK_THROWS_AS(build_training_sets(pointers(recs), MonthAlignment::Blocks), InvalidArgument);
}

TEST_CASE("too few months to train") {
  std::vector<CustomerRecord> recs{constant_customer("C", 1.0, 3)};
  CHECK_THROWS_AS(train_mtsl({}, pointers(recs), quick_config(), MonthAlignment::Blocks), InvalidArgument);
}

TEST_CASE("constant-load class disaggregates a 672 kWh bill into near-ones") {
  std::vector<CustomerRecord> recs;
  for (int i = 0; i < 10; ++i) recs.push_back(constant_customer("C" + std::to_string(i), 0.5 + 0.1 * i, 2));
  auto model = train_mtsl({}, pointers(recs), quick_config(), MonthAlignment::Blocks);
  MonthlyBill bill{"X", 0, kStart, 672.0};
  auto d = disaggregate(model, bill);
  double mean_dev = 0.0;
  for (double v : d.hourly) {
    CHECK(std::abs(v - 1.0) <= 0.05);
    mean_dev += std::abs(v - 1.0) / kHoursPerMonth;
  }
  CHECK(mean_dev <= 0.02);
}

TEST_CASE("planted class: fidelity, conservation, determinism and class specificity") {
  auto p = planted_classes();
  auto cfg = quick_config();
  auto ma = train_mtsl({CustomerType::Residential, DayKind::Weekday, 0}, pointers(p.a), cfg, MonthAlignment::Blocks,
                       training_month);
  auto mb = train_mtsl({CustomerType::Residential, DayKind::Weekday, 1}, pointers(p.b), cfg, MonthAlignment::Blocks,
                       training_month);

  SUBCASE("held-out month within 5% MAPE") {
    for (const auto& r : p.a) {
      auto bill = bill_from_truth(r, 2, MonthAlignment::Blocks);
      auto est = disaggregate(ma, bill);
      auto truth = month_readings(r, bill.start);
      CHECK(mape(truth, est.hourly).value < 5.0);
    }
  }
  SUBCASE("every layer sums to its parent") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 5000.0);
    for (int i = 0; i < 50; ++i) {
      MonthlyBill bill{"X", 0, kStart, u(rng)};
      auto d = disaggregate(ma, bill);
      const double tol = 1e-9 * std::max(1.0, bill.energy_kwh);
      CHECK(std::abs(std::accumulate(d.weekly.begin(), d.weekly.end(), 0.0) - bill.energy_kwh) <= tol);
      for (int w = 0; w < kWeeksPerMonth; ++w) {
        double s = 0.0;
        for (int k = 0; k < kDaysPerWeek; ++k) s += d.daily[w * kDaysPerWeek + k];
        CHECK(std::abs(s - d.weekly[w]) <= tol);
      }
      for (int day = 0; day < kDaysPerMonth; ++day) {
        double s = std::accumulate(d.hourly.begin() + day * 24, d.hourly.begin() + day * 24 + 24, 0.0);
        CHECK(std::abs(s - d.daily[day]) <= tol);
      }
      for (double v : d.hourly) CHECK(v >= 0.0);
    }
  }
  SUBCASE("zero bill gives zeros, negative bill is rejected") {
    auto d = disaggregate(ma, MonthlyBill{"X", 0, kStart, 0.0});
    for (double v : d.hourly) CHECK(v == 0.0);
    CHECK_THROWS_AS(disaggregate(ma, MonthlyBill{"X", 0, kStart, -1.0}), InvalidArgument);
  }
  SUBCASE("same seed, same model") {
    auto again = train_mtsl({CustomerType::Residential, DayKind::Weekday, 0}, pointers(p.a), cfg,
                            MonthAlignment::Blocks, training_month);
    CHECK(serialize_model(again) == serialize_model(ma));
  }
  SUBCASE("the matching class model fits better") {
    double own = 0.0, other = 0.0;
    for (const auto& r : p.a) {
      auto bill = bill_from_truth(r, 2, MonthAlignment::Blocks);
      auto truth = month_readings(r, bill.start);
      own += goodness_r(truth, disaggregate(ma, bill).hourly);
      other += goodness_r(truth, disaggregate(mb, bill).hourly);
    }
    CHECK(own > other);
  }
  SUBCASE("model persistence round trip") {
    gridobs::testing::TempDir dir("mtsl_rt");
    save_model(ma, dir.path() / "m.json");
    auto back = load_model(dir.path() / "m.json");
    CHECK(serialize_model(back) == serialize_model(ma));
    MonthlyBill bill{"X", 0, kStart, 321.0};
    CHECK(disaggregate(back, bill).hourly == disaggregate(ma, bill).hourly);
  }
}

TEST_CASE("absolute correlation") {
  std::vector<double> x{1, 2, 3, 5, 8}, neg;
  for (double v : x) neg.push_back(-v);
  CHECK(abs_correlation(x, x) == doctest::Approx(1.0));
  CHECK(abs_correlation(x, neg) == doctest::Approx(1.0));
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n;
  std::vector<double> a(1000), b(1000);
  for (auto& v : a) v = n(rng);
  for (auto& v : b) v = n(rng);
  CHECK(abs_correlation(a, b) < 0.2);
  std::vector<double> flat(5, 2.0);
  CHECK_THROWS_AS(abs_correlation(x, flat), NumericalError);
}

TEST_CASE("timescale correlation table") {
  PopulationSpec spec;
  spec.counts = {6, 3, 2};
  spec.months = 2;
  auto recs = generate_population(spec);
  auto table = timescale_correlation(recs, MonthAlignment::Blocks);
  CHECK(table.size() == 15);
  for (const auto& e : table)
    if (e.rho) {
      CHECK(*e.rho >= 0.0);
      CHECK(*e.rho <= 1.0 + 1e-12);
    }
}
