#include "fab/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fab/errors.hpp"

namespace fab {

double clip_gradient(Eigen::VectorXd& grad, double max_norm) {
  const double norm = grad.norm();
  if (max_norm > 0.0 && norm > max_norm) grad *= max_norm / norm;
  return norm;
}

Adam::Adam(AdamConfig config, std::size_t n_params)
    : config_(config),
      m_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_params))),
      v_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_params))) {
  if (!(config_.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(config_.beta1 >= 0.0 && config_.beta1 < 1.0) ||
      !(config_.beta2 >= 0.0 && config_.beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (config_.cosine_decay && config_.decay_steps == 0)
    throw ConfigError("cosine decay needs a positive number of steps");
}

double Adam::learning_rate() const {
  if (!config_.cosine_decay) return config_.lr;
  const double frac =
      std::min(1.0, static_cast<double>(t_) / static_cast<double>(config_.decay_steps));
  return 0.5 * config_.lr * (1.0 + std::cos(std::numbers::pi * frac));
}

double Adam::step(Eigen::VectorXd& params, Eigen::VectorXd grad) {
  if (grad.size() != m_.size() || params.size() != m_.size())
    throw ConfigError("gradient and optimizer state differ in length");
  const double norm = clip_gradient(grad, config_.clip_norm);
  const double lr = learning_rate();
  ++t_;
  m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * grad;
  v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * grad.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  params.array() -=
      lr * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + config_.eps);
  return norm;
}

}  // namespace fab
