#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace fab {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 100.0;    // <= 0 disables clipping
  bool cosine_decay = false;
  std::size_t decay_steps = 0;  // horizon of the cosine schedule
};

// Rescales grad in place to norm at most max_norm; returns the norm before
// clipping.
double clip_gradient(Eigen::VectorXd& grad, double max_norm);

class Adam {
 public:
  Adam(AdamConfig config, std::size_t n_params);

  // Clips, then applies one update; returns the pre-clip gradient norm.
  double step(Eigen::VectorXd& params, Eigen::VectorXd grad);

  double learning_rate() const;
  std::size_t steps() const { return t_; }
  const Eigen::VectorXd& first_moment() const { return m_; }
  const Eigen::VectorXd& second_moment() const { return v_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  std::size_t t_ = 0;
};

}  // namespace fab
