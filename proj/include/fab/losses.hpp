#pragma once

#include <atomic>
#include <cstdint>
#include <memory>

#include <Eigen/Core>

#include "fab/ais.hpp"
#include "fab/buffer.hpp"
#include "fab/flow.hpp"
#include "fab/targets.hpp"

namespace fab {

// alpha log p + (1 - alpha) log q, elementwise; 2 log p - log q at alpha = 2.
Eigen::VectorXd ais_bootstrap_target(const Eigen::VectorXd& log_p,
                                     const Eigen::VectorXd& log_q, double alpha);
double ais_bootstrap_target(const FlowModel& flow, const TargetDensity& target,
                            const Eigen::VectorXd& x, double alpha);

/// AIS path from the current flow to p^alpha q^(1 - alpha). Counts every
/// point pushed through the flow.
class FlowBootstrapPath final : public AnnealingPath {
 public:
  FlowBootstrapPath(const FlowModel& flow, TargetPtr target, double alpha);

  int dim() const override { return flow_.dim(); }
  FlowSample sample_initial(std::size_t n, Rng& rng) const override;
  PathEval evaluate(const Points& x, bool with_grad) const override;
  PathEval evaluate_sampled(const FlowSample& s, bool with_grad) const override;

  std::uint64_t flow_evals() const { return evals_.load(); }

 private:
  const FlowModel& flow_;
  TargetPtr target_;
  double alpha_;
  mutable std::atomic<std::uint64_t> evals_{0};
};

struct SurrogateLoss {
  double loss = 0.0;
  Eigen::VectorXd weights;  // self-normalised, sum to one
};

// softmax(log_ws) weighted -sum log_qs. Both inputs must be finite; throws
// EmptyBatchError on an empty batch.
SurrogateLoss fab_surrogate_loss(const Eigen::VectorXd& log_qs,
                                 const Eigen::VectorXd& log_ws);

struct LossGradient {
  double loss = 0.0;
  Eigen::VectorXd grad;
  std::size_t dropped = 0;
};

// Parameter gradient of the surrogate loss at xs. Pairs with a non-finite
// log q or log w are dropped before normalising.
LossGradient fab_surrogate_gradient(const FlowModel& flow, const Points& xs,
                                    const Eigen::VectorXd& log_ws);

// -(1/alpha) sum_i softmax(log_ws)_i grad log q(x_i). alpha = 0 is rejected.
LossGradient generic_alpha_gradient(const FlowModel& flow, const Points& xs,
                                    const Eigen::VectorXd& log_ws, double alpha);

// mean(log q(x) - log p(x)) over reparameterised flow samples.
LossGradient reverse_kl_gradient(const FlowModel& flow, const TargetDensity& target,
                                 std::size_t n, Rng& rng);

// log of the importance estimate mean(w^2) of integral p^2/q with
// w = p/q under reparameterised flow samples. `estimate` in the result holds
// the estimate itself.
struct D2Gradient : LossGradient {
  double estimate = 0.0;
};
D2Gradient d2_over_q_gradient(const FlowModel& flow, const TargetDensity& target,
                              std::size_t n, Rng& rng);

// -mean log q over exact target samples.
LossGradient max_likelihood_gradient(const FlowModel& flow,
                                     const TargetDensity& target, std::size_t n,
                                     Rng& rng);

struct BufferGradient {
  Eigen::VectorXd grad;   // already clipped
  double log_norm = 0.0;  // log of the norm before clipping
  double loss = 0.0;      // may overflow to +-inf; NaN marks a failure
  std::size_t dropped = 0;
};

// Inner replay-buffer step: one flow pass gives log q, fills the draw's
// corrections, and yields the gradient of -(1/n) sum w_corr,i log q(x_i),
// clipped to clip_norm (<= 0 disables clipping). Weights are rescaled by
// their maximum so corrections beyond the double range still give the exact
// clipped gradient.
BufferGradient fab_buffer_gradient(const FlowModel& flow, BufferDraw& draw,
                                   double alpha, double n, double clip_norm);

double log_sum_exp(const Eigen::VectorXd& v);
Eigen::VectorXd softmax(const Eigen::VectorXd& v);

}  // namespace fab
