#include "fab/losses.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "fab/errors.hpp"

namespace fab {

namespace {

std::vector<Eigen::Index> finite_pairs(const Eigen::VectorXd& a,
                                       const Eigen::VectorXd& b) {
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (std::isfinite(a[i]) && std::isfinite(b[i])) keep.push_back(i);
  return keep;
}

}  // namespace

double log_sum_exp(const Eigen::VectorXd& v) {
  if (v.size() == 0) return -std::numeric_limits<double>::infinity();
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

Eigen::VectorXd softmax(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  Eigen::VectorXd e = (v.array() - m).exp();
  return e / e.sum();
}

Eigen::VectorXd ais_bootstrap_target(const Eigen::VectorXd& log_p,
                                     const Eigen::VectorXd& log_q, double alpha) {
  if (alpha == 1.0) return log_p;
  return alpha * log_p + (1.0 - alpha) * log_q;
}

double ais_bootstrap_target(const FlowModel& flow, const TargetDensity& target,
                            const Eigen::VectorXd& x, double alpha) {
  const double lq = flow.log_prob(Points(x))[0];
  const double lp = target.log_prob_at(x);
  if (alpha == 1.0) return lp;
  return alpha * lp + (1.0 - alpha) * lq;
}

FlowBootstrapPath::FlowBootstrapPath(const FlowModel& flow, TargetPtr target,
                                     double alpha)
    : flow_(flow), target_(std::move(target)), alpha_(alpha) {
  if (!target_ || target_->dim() != flow_.dim())
    throw ConfigError("flow and target differ in dimension");
}

FlowSample FlowBootstrapPath::sample_initial(std::size_t n, Rng& rng) const {
  evals_ += n;
  return flow_.sample(n, rng);
}

PathEval FlowBootstrapPath::evaluate(const Points& x, bool with_grad) const {
  evals_ += static_cast<std::uint64_t>(x.cols());
  PathEval e;
  const Eigen::VectorXd lp = target_->log_prob(x);
  if (with_grad) {
    LogProbGrad lg = flow_.log_prob_with_grad_x(x);
    e.log_init = std::move(lg.log_q);
    e.grad_init = std::move(lg.grad_x);
    const Points gp = target_->grad_log_prob(x);
    e.grad_target = alpha_ * gp + (1.0 - alpha_) * e.grad_init;
  } else {
    e.log_init = flow_.log_prob(x);
  }
  e.log_target = ais_bootstrap_target(lp, e.log_init, alpha_);
  return e;
}

PathEval FlowBootstrapPath::evaluate_sampled(const FlowSample& s,
                                             bool with_grad) const {
  if (with_grad) return evaluate(s.xs, true);
  PathEval e;
  e.log_init = s.log_q;
  e.log_target = ais_bootstrap_target(target_->log_prob(s.xs), s.log_q, alpha_);
  return e;
}

SurrogateLoss fab_surrogate_loss(const Eigen::VectorXd& log_qs,
                                 const Eigen::VectorXd& log_ws) {
  if (log_qs.size() != log_ws.size())
    throw ConfigError("log_qs and log_ws differ in length");
  if (log_qs.size() == 0) throw EmptyBatchError("surrogate loss on an empty batch");
  if (!log_qs.allFinite() || !log_ws.allFinite())
    throw ConfigError("surrogate loss inputs must be finite");
  SurrogateLoss out;
  out.weights = softmax(log_ws);
  out.loss = -out.weights.dot(log_qs);
  return out;
}

LossGradient fab_surrogate_gradient(const FlowModel& flow, const Points& xs,
                                    const Eigen::VectorXd& log_ws) {
  const Eigen::VectorXd log_qs = flow.log_prob(xs);
  const auto keep = finite_pairs(log_qs, log_ws);
  if (keep.empty()) throw EmptyBatchError("every sample of the batch is non-finite");
  const Eigen::VectorXd lq = log_qs(keep);
  const Points x = xs(Eigen::all, keep);
  SurrogateLoss sl = fab_surrogate_loss(lq, log_ws(keep));
  LossGradient out;
  out.loss = sl.loss;
  out.grad = flow.grad_weighted_neg_logprob(x, sl.weights).grad;
  out.dropped = static_cast<std::size_t>(xs.cols()) - keep.size();
  return out;
}

LossGradient generic_alpha_gradient(const FlowModel& flow, const Points& xs,
                                    const Eigen::VectorXd& log_ws, double alpha) {
  if (alpha == 0.0) throw ConfigError("alpha = 0 has no FAB gradient");
  LossGradient out = fab_surrogate_gradient(flow, xs, log_ws);
  out.grad /= alpha;
  out.loss /= alpha;
  return out;
}

LossGradient reverse_kl_gradient(const FlowModel& flow, const TargetDensity& target,
                                 std::size_t n, Rng& rng) {
  const Points z = standard_normal(flow.dim(), static_cast<Eigen::Index>(n), rng);
  const FlowOutput f = flow.forward(z);
  const Eigen::VectorXd lp = target.log_prob(f.points);
  const Points gp = target.grad_log_prob(f.points);
  Eigen::VectorXd log_q(z.cols());
  for (Eigen::Index i = 0; i < z.cols(); ++i)
    log_q[i] = FlowModel::base_log_prob(z.col(i)) - f.log_det[i];

  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < z.cols(); ++i)
    if (std::isfinite(lp[i]) && std::isfinite(log_q[i]) && gp.col(i).allFinite())
      keep.push_back(i);
  if (keep.empty()) throw EmptyBatchError("every sample of the batch is non-finite");
  const double m = static_cast<double>(keep.size());
  Points cot_x = Points::Zero(z.rows(), z.cols());
  Eigen::VectorXd cot_ld = Eigen::VectorXd::Zero(z.cols());
  LossGradient out;
  for (Eigen::Index i : keep) {
    cot_x.col(i) = -gp.col(i) / m;
    cot_ld[i] = -1.0 / m;
    out.loss += (log_q[i] - lp[i]) / m;
  }
  out.grad = flow.forward_vjp(z, cot_x, cot_ld);
  out.dropped = n - keep.size();
  return out;
}

D2Gradient d2_over_q_gradient(const FlowModel& flow, const TargetDensity& target,
                              std::size_t n, Rng& rng) {
  const Points z = standard_normal(flow.dim(), static_cast<Eigen::Index>(n), rng);
  const FlowOutput f = flow.forward(z);
  const Eigen::VectorXd lp = target.log_prob(f.points);
  const Points gp = target.grad_log_prob(f.points);
  std::vector<Eigen::Index> keep;
  Eigen::VectorXd log_w(z.cols());
  for (Eigen::Index i = 0; i < z.cols(); ++i) {
    log_w[i] = lp[i] - FlowModel::base_log_prob(z.col(i)) + f.log_det[i];
    if (std::isfinite(log_w[i]) && gp.col(i).allFinite()) keep.push_back(i);
  }
  if (keep.empty()) throw EmptyBatchError("every sample of the batch is non-finite");
  const Eigen::VectorXd lw2 = 2.0 * log_w(keep);
  const Eigen::VectorXd s = softmax(lw2);
  D2Gradient out;
  out.loss = log_sum_exp(lw2) - std::log(static_cast<double>(keep.size()));
  out.estimate = std::exp(out.loss);
  Points cot_x = Points::Zero(z.rows(), z.cols());
  Eigen::VectorXd cot_ld = Eigen::VectorXd::Zero(z.cols());
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const Eigen::Index i = keep[k];
    cot_x.col(i) = 2.0 * s[k] * gp.col(i);
    cot_ld[i] = 2.0 * s[k];
  }
  out.grad = flow.forward_vjp(z, cot_x, cot_ld);
  out.dropped = n - keep.size();
  return out;
}

LossGradient max_likelihood_gradient(const FlowModel& flow,
                                     const TargetDensity& target, std::size_t n,
                                     Rng& rng) {
  if (!target.has_exact_sampler())
    throw ConfigError("maximum likelihood needs a target with an exact sampler");
  const Points x = target.sample(n, rng);
  const Eigen::VectorXd lq = flow.log_prob(x);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < lq.size(); ++i)
    if (std::isfinite(lq[i])) keep.push_back(i);
  if (keep.empty()) throw EmptyBatchError("every sample of the batch is non-finite");
  const double m = static_cast<double>(keep.size());
  LossGradient out;
  out.loss = -lq(keep).sum() / m;
  out.grad = flow.grad_weighted_neg_logprob(x(Eigen::all, keep),
                                            Eigen::VectorXd::Constant(keep.size(), 1.0 / m))
                 .grad;
  out.dropped = n - keep.size();
  return out;
}

BufferGradient fab_buffer_gradient(const FlowModel& flow, BufferDraw& d, double alpha,
                                   double n, double clip_norm) {
  double mx = 0.0;
  Eigen::VectorXd scaled;
  WeightedGrad wg = flow.grad_reweighted_neg_logprob(d.xs, [&](const Eigen::VectorXd& lq) {
    d.correct(lq, alpha);
    mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < lq.size(); ++i)
      if (std::isfinite(d.log_w_correction[i])) mx = std::max(mx, d.log_w_correction[i]);
    scaled = Eigen::VectorXd::Zero(lq.size());
    for (Eigen::Index i = 0; i < lq.size(); ++i)
      if (std::isfinite(d.log_w_correction[i]))
        scaled[i] = std::exp(d.log_w_correction[i] - mx) / n;
    return scaled;
  });
  BufferGradient out;
  out.dropped = wg.dropped;
  if (wg.dropped == static_cast<std::size_t>(d.xs.cols()) || !std::isfinite(mx)) {
    d.correct(wg.log_q, alpha);
    out.loss = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  double dot = 0.0;
  for (Eigen::Index i = 0; i < scaled.size(); ++i)
    if (scaled[i] > 0.0) dot += scaled[i] * wg.log_q[i];
  out.loss = -std::exp(mx) * dot;
  if (std::isnan(out.loss)) out.loss = -dot >= 0 ? HUGE_VAL : -HUGE_VAL;
  const double gn = wg.grad.norm();
  out.log_norm = mx + std::log(gn);
  if (clip_norm > 0.0 && out.log_norm > std::log(clip_norm))
    wg.grad *= clip_norm / gn;
  else
    wg.grad *= std::exp(mx);
  out.grad = std::move(wg.grad);
  return out;
}


}  // namespace fab
