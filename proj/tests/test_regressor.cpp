#include <cmath>
#include <random>

#include "doctest.h"
#include "gridobs/common.hpp"
#include "gridobs/regressor.hpp"

using namespace gridobs;

namespace {

Dataset linear_map(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  Dataset d;
  d.inputs.resize(static_cast<Eigen::Index>(n), 2);
  d.targets.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < d.inputs.rows(); ++i) {
    d.inputs(i, 0) = u(rng);
    d.inputs(i, 1) = u(rng);
    d.targets(i) = 0.3 * d.inputs(i, 0) - 0.2 * d.inputs(i, 1) + 1.0;
  }
  return d;
}

double max_gradient_error(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Regressor r(2, 5);
  r.initialize(rng);
  Eigen::MatrixXd xs = Eigen::MatrixXd::Random(9, 2);
  Eigen::VectorXd ys = Eigen::VectorXd::Random(9);
  Eigen::VectorXd grad;
  r.loss_and_gradient(xs, ys, &grad);
  Eigen::VectorXd theta = r.parameters();
  double worst = 0.0;
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
    const double err = std::abs(fd - grad(k)) / std::max(1e-8, std::abs(fd) + std::abs(grad(k)));
    worst = std::max(worst, err);
  }
  r.set_parameters(theta);
  return worst;
}

}  // namespace

TEST_CASE("analytic gradient matches central differences") {
  double worst = 0.0;
  for (std::uint64_t s = 1; s <= 20; ++s) worst = std::max(worst, max_gradient_error(s));
  CHECK(worst < 1e-5);
}

TEST_CASE("parameter vector round trip") {
  std::mt19937_64 rng(3);
  Regressor r(2, 4);
  r.initialize(rng);
  CHECK(r.parameter_count() == static_cast<std::size_t>(4 * 2 + 4 + 4 + 1));
  Eigen::VectorXd theta = r.parameters();
  Regressor q(2, 4);
  q.set_parameters(theta);
  CHECK(q.parameters() == theta);
  CHECK_THROWS_AS(q.set_parameters(Eigen::VectorXd::Zero(3)), InvalidArgument);
}

TEST_CASE("fits an exact linear map") {
  TrainConfig cfg;
  cfg.noise_sigma = 0.0;
  cfg.max_epochs = 400;
  cfg.patience = 60;
  auto fit = train_regressor(linear_map(400, 5), cfg, 0);
  CHECK(fit.log.test_rmse < 0.05);
  CHECK(fit.model.predict(5.0, 5.0) == doctest::Approx(1.5).epsilon(2e-3));
}

TEST_CASE("zero patience stops at the first validation uptick") {
  TrainConfig cfg;
  cfg.patience = 0;
  cfg.noise_sigma = 0.2;
  cfg.max_epochs = 500;
  auto fit = train_regressor(linear_map(120, 9), cfg, 1);
  const auto& v = fit.log.validation_loss;
  REQUIRE(fit.log.stopped_early);
  REQUIRE(v.size() >= 2);
  CHECK(v.back() >= v[v.size() - 2]);
  for (std::size_t i = 1; i + 1 < v.size(); ++i) CHECK(v[i] < v[i - 1]);
}

TEST_CASE("training is deterministic per stream") {
  TrainConfig cfg;
  cfg.max_epochs = 30;
  auto a = train_regressor(linear_map(100, 2), cfg, 4);
  auto b = train_regressor(linear_map(100, 2), cfg, 4);
  auto c = train_regressor(linear_map(100, 2), cfg, 5);
  CHECK(a.model.parameters() == b.model.parameters());
  CHECK(a.model.parameters() != c.model.parameters());
}

TEST_CASE("invalid training configuration") {
  TrainConfig cfg;
  cfg.train_fraction = 0.9;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  TrainConfig ok;
  ok.hidden = 0;
  CHECK_THROWS_AS(ok.validate(), InvalidArgument);
}
