#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace gridobs {

struct Dataset {
  Eigen::MatrixXd inputs;   // n x d
  Eigen::VectorXd targets;  // n
};

struct TrainConfig {
  double train_fraction = 0.70;
  double validation_fraction = 0.15;
  double test_fraction = 0.15;
  int patience = 20;
  double noise_sigma = 0.01;   // injected input noise, in input standard deviations
  double learning_rate = 1e-2;
  double lr_decay = 0.99;      // per epoch
  int max_epochs = 300;
  int batch_size = 32;
  int hidden = 16;
  std::uint64_t seed = 1;

  void validate() const;
};

/// One-hidden-layer tanh network with a linear output. Inputs and target
/// are standardised with statistics captured at training time; `predict`
/// works in raw units.
class Regressor {
 public:
  Regressor() = default;
  Regressor(int inputs, int hidden);

  int input_width() const { return static_cast<int>(w1_.cols()); }
  int hidden_width() const { return static_cast<int>(w1_.rows()); }

  void initialize(std::mt19937_64& rng);

  double predict(std::span<const double> x) const;
  double predict(double a, double b) const;
  Eigen::VectorXd predict(const Eigen::MatrixXd& inputs) const;

  // Standardised-space forward pass; rows of `xs` are samples.
  Eigen::VectorXd forward(const Eigen::MatrixXd& xs) const;
  // Half mean squared error in standardised space, and its gradient with
  // respect to the flattened parameters.
  double loss_and_gradient(const Eigen::MatrixXd& xs, const Eigen::VectorXd& ys,
                           Eigen::VectorXd* gradient) const;

  std::size_t parameter_count() const;
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& flat);

  // Normalisation.
  Eigen::VectorXd input_mean;
  Eigen::VectorXd input_scale;
  double target_mean = 0.0;
  double target_scale = 1.0;

  void fit_normalization(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets);
  Eigen::MatrixXd standardize_inputs(const Eigen::MatrixXd& inputs) const;

  const Eigen::MatrixXd& w1() const { return w1_; }
  const Eigen::VectorXd& b1() const { return b1_; }
  const Eigen::VectorXd& w2() const { return w2_; }
  double b2() const { return b2_; }

 private:
  Eigen::MatrixXd w1_;  // hidden x inputs
  Eigen::VectorXd b1_;
  Eigen::VectorXd w2_;
  double b2_ = 0.0;
};

struct TrainingLog {
  std::vector<double> train_loss;
  std::vector<double> validation_loss;
  int best_epoch = 0;
  double best_validation = 0.0;
  std::size_t train_size = 0;
  std::size_t validation_size = 0;
  std::size_t test_size = 0;
  double test_rmse = 0.0;  // raw units, best snapshot
  bool stopped_early = false;
};

struct TrainedRegressor {
  Regressor model;
  TrainingLog log;
};

/// Mini-batch Adam on noise-injected inputs with early stopping on the
/// validation split. Returns the best-validation snapshot. `stream`
/// separates random streams of regressors sharing one config seed.
/// Throws NumericalError when the loss becomes non-finite.
TrainedRegressor train_regressor(const Dataset& data, const TrainConfig& config, std::uint64_t stream);

}  // namespace gridobs
