#include "gridobs/regressor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "gridobs/common.hpp"

namespace gridobs {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void TrainConfig::validate() const {
  double sum = train_fraction + validation_fraction + test_fraction;
  if (std::abs(sum - 1.0) > 1e-9) throw InvalidArgument("split fractions must sum to 1");
  if (train_fraction <= 0.0 || validation_fraction <= 0.0 || test_fraction < 0.0)
    throw InvalidArgument("split fractions must be positive");
  if (noise_sigma < 0.0) throw InvalidArgument("noise sigma must be >= 0");
  if (patience < 0 || max_epochs < 1 || batch_size < 1 || hidden < 1 || !(learning_rate > 0.0))
    throw InvalidArgument("invalid training configuration");
}

Regressor::Regressor(int inputs, int hidden)
    : input_mean(VectorXd::Zero(inputs)),
      input_scale(VectorXd::Ones(inputs)),
      w1_(MatrixXd::Zero(hidden, inputs)),
      b1_(VectorXd::Zero(hidden)),
      w2_(VectorXd::Zero(hidden)) {}

void Regressor::initialize(std::mt19937_64& rng) {
  double limit1 = std::sqrt(6.0 / (w1_.rows() + w1_.cols()));
  double limit2 = std::sqrt(6.0 / (w2_.size() + 1));
  std::uniform_real_distribution<double> u1(-limit1, limit1), u2(-limit2, limit2);
  for (Eigen::Index i = 0; i < w1_.size(); ++i) w1_.data()[i] = u1(rng);
  for (Eigen::Index i = 0; i < w2_.size(); ++i) w2_(i) = u2(rng);
  b1_.setZero();
  b2_ = 0.0;
}

void Regressor::fit_normalization(const MatrixXd& inputs, const VectorXd& targets) {
  auto stats = [](auto col, double& mean, double& scale) {
    const double n = static_cast<double>(col.size());
    mean = col.sum() / n;
    double var = (col.array() - mean).square().sum() / n;
    double sd = std::sqrt(var);
    scale = sd > 1e-12 * std::max(1.0, std::abs(mean)) ? sd : 1.0;
  };
  input_mean.resize(inputs.cols());
  input_scale.resize(inputs.cols());
  for (Eigen::Index c = 0; c < inputs.cols(); ++c) stats(inputs.col(c), input_mean(c), input_scale(c));
  stats(targets, target_mean, target_scale);
}

MatrixXd Regressor::standardize_inputs(const MatrixXd& inputs) const {
  return (inputs.rowwise() - input_mean.transpose()).array().rowwise() / input_scale.transpose().array();
}

VectorXd Regressor::forward(const MatrixXd& xs) const {
  MatrixXd a = (w1_ * xs.transpose()).colwise() + b1_;
  return (w2_.transpose() * a.array().tanh().matrix()).transpose().array() + b2_;
}

double Regressor::predict(std::span<const double> x) const {
  double out = b2_;
  for (Eigen::Index h = 0; h < w1_.rows(); ++h) {
    double a = b1_(h);
    for (Eigen::Index c = 0; c < w1_.cols(); ++c)
      a += w1_(h, c) * (x[static_cast<std::size_t>(c)] - input_mean(c)) / input_scale(c);
    out += w2_(h) * std::tanh(a);
  }
  return out * target_scale + target_mean;
}

double Regressor::predict(double a, double b) const {
  const double x[2] = {a, b};
  return predict(std::span<const double>(x, 2));
}

VectorXd Regressor::predict(const MatrixXd& inputs) const {
  return (forward(standardize_inputs(inputs)).array() * target_scale + target_mean).matrix();
}

double Regressor::loss_and_gradient(const MatrixXd& xs, const VectorXd& ys, VectorXd* gradient) const {
  const double n = static_cast<double>(xs.rows());
  MatrixXd z = ((w1_ * xs.transpose()).colwise() + b1_).array().tanh().matrix();  // h x n
  VectorXd out = (w2_.transpose() * z).transpose().array() + b2_;
  VectorXd err = out - ys;
  double loss = 0.5 * err.squaredNorm() / n;
  if (gradient) {
    VectorXd e = err / n;
    VectorXd dw2 = z * e;
    double db2 = e.sum();
    MatrixXd da = ((w2_ * e.transpose()).array() * (1.0 - z.array().square())).matrix();  // h x n
    MatrixXd dw1 = da * xs;
    VectorXd db1 = da.rowwise().sum();
    gradient->resize(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < dw1.size(); ++i) (*gradient)(k++) = dw1.data()[i];
    for (Eigen::Index i = 0; i < db1.size(); ++i) (*gradient)(k++) = db1(i);
    for (Eigen::Index i = 0; i < dw2.size(); ++i) (*gradient)(k++) = dw2(i);
    (*gradient)(k) = db2;
  }
  return loss;
}

std::size_t Regressor::parameter_count() const {
  return static_cast<std::size_t>(w1_.size() + b1_.size() + w2_.size() + 1);
}

VectorXd Regressor::parameters() const {
  VectorXd flat(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < w1_.size(); ++i) flat(k++) = w1_.data()[i];
  for (Eigen::Index i = 0; i < b1_.size(); ++i) flat(k++) = b1_(i);
  for (Eigen::Index i = 0; i < w2_.size(); ++i) flat(k++) = w2_(i);
  flat(k) = b2_;
  return flat;
}

void Regressor::set_parameters(const VectorXd& flat) {
  if (flat.size() != static_cast<Eigen::Index>(parameter_count()))
    throw InvalidArgument("parameter vector has the wrong length");
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < w1_.size(); ++i) w1_.data()[i] = flat(k++);
  for (Eigen::Index i = 0; i < b1_.size(); ++i) b1_(i) = flat(k++);
  for (Eigen::Index i = 0; i < w2_.size(); ++i) w2_(i) = flat(k++);
  b2_ = flat(k);
}

namespace {

MatrixXd rows_of(const MatrixXd& m, std::span<const std::size_t> idx) {
  MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

VectorXd rows_of(const VectorXd& v, std::span<const std::size_t> idx) {
  VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(static_cast<Eigen::Index>(idx[i]));
  return out;
}

}  // namespace

TrainedRegressor train_regressor(const Dataset& data, const TrainConfig& config, std::uint64_t stream) {
  config.validate();
  const auto n = static_cast<std::size_t>(data.inputs.rows());
  if (n < 20) throw InvalidArgument("train_regressor: at least 20 pairs required, got " + std::to_string(n));
  if (static_cast<std::size_t>(data.targets.size()) != n) throw InvalidArgument("inputs/targets length mismatch");

  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::mt19937_64 rng(seq);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(config.train_fraction * static_cast<double>(n)));
  auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(config.validation_fraction * static_cast<double>(n))));
  n_train = std::min(n_train, n - n_val);
  std::span<const std::size_t> train_idx(order.data(), n_train);
  std::span<const std::size_t> val_idx(order.data() + n_train, n_val);
  std::span<const std::size_t> test_idx(order.data() + n_train + n_val, n - n_train - n_val);

  TrainedRegressor out;
  Regressor& model = out.model;
  model = Regressor(static_cast<int>(data.inputs.cols()), config.hidden);
  MatrixXd x_train = rows_of(data.inputs, train_idx);
  VectorXd y_train = rows_of(data.targets, train_idx);
  model.fit_normalization(x_train, y_train);
  model.initialize(rng);

  auto standardize_targets = [&](const VectorXd& y) {
    return ((y.array() - model.target_mean) / model.target_scale).matrix();
  };
  MatrixXd xs_train = model.standardize_inputs(x_train);
  VectorXd ys_train = standardize_targets(y_train);
  MatrixXd xs_val = model.standardize_inputs(rows_of(data.inputs, val_idx));
  VectorXd ys_val = standardize_targets(rows_of(data.targets, val_idx));

  const auto p = static_cast<Eigen::Index>(model.parameter_count());
  VectorXd theta = model.parameters();
  VectorXd m = VectorXd::Zero(p), v = VectorXd::Zero(p), grad(p);
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;

  VectorXd best = theta;
  double best_val = model.loss_and_gradient(xs_val, ys_val, nullptr);
  out.log.best_epoch = 0;
  int since_best = 0;
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<std::size_t> batch_order(n_train);
  std::iota(batch_order.begin(), batch_order.end(), 0);
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const double lr = config.learning_rate * std::pow(config.lr_decay, epoch - 1);
    std::shuffle(batch_order.begin(), batch_order.end(), rng);
    for (std::size_t start = 0; start < n_train; start += batch) {
      std::span<const std::size_t> idx(batch_order.data() + start, std::min(batch, n_train - start));
      MatrixXd xb = rows_of(xs_train, idx);
      if (config.noise_sigma > 0.0)
        for (Eigen::Index i = 0; i < xb.size(); ++i) xb.data()[i] += config.noise_sigma * noise(rng);
      VectorXd yb = rows_of(ys_train, idx);
      model.loss_and_gradient(xb, yb, &grad);
      ++step;
      m = beta1 * m + (1.0 - beta1) * grad;
      v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
      double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      theta -= (lr * (m / c1).array() / ((v / c2).array().sqrt() + eps)).matrix();
      model.set_parameters(theta);
    }
    double train_loss = model.loss_and_gradient(xs_train, ys_train, nullptr);
    double val_loss = model.loss_and_gradient(xs_val, ys_val, nullptr);
    if (!std::isfinite(train_loss) || !std::isfinite(val_loss)) {
      std::ostringstream msg;
      msg << "training diverged at epoch " << epoch << " (train loss " << train_loss
          << ", validation loss " << val_loss << ", lr " << lr << ")";
      throw NumericalError(msg.str());
    }
    out.log.train_loss.push_back(train_loss);
    out.log.validation_loss.push_back(val_loss);
    if (val_loss < best_val) {
      best_val = val_loss;
      best = theta;
      out.log.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best > config.patience) {
      out.log.stopped_early = true;
      break;
    }
  }

  model.set_parameters(best);
  out.log.best_validation = best_val;
  out.log.train_size = n_train;
  out.log.validation_size = n_val;
  out.log.test_size = test_idx.size();
  if (!test_idx.empty()) {
    VectorXd pred = model.predict(rows_of(data.inputs, test_idx));
    VectorXd truth = rows_of(data.targets, test_idx);
    out.log.test_rmse = std::sqrt((pred - truth).squaredNorm() / static_cast<double>(test_idx.size()));
  }
  return out;
}

}  // namespace gridobs
