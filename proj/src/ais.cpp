#include "fab/ais.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "fab/errors.hpp"

namespace fab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool finite_column(const DensityValue& v, Eigen::Index j, bool with_grad) {
  if (!std::isfinite(v.log_p[j])) return false;
  return !with_grad || v.grad.col(j).allFinite();
}

double mean_finite(const Eigen::VectorXd& v, const std::vector<char>& alive) {
  double sum = 0.0;
  std::size_t n = 0;
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    if (!alive[j]) continue;
    sum += v[j];
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

// Acceptance decision shared by both kernels; `log_ratio` may be NaN.
void accept_reject(const Eigen::VectorXd& log_ratio, const DensityValue& proposed,
                   const Points& x_prop, bool with_grad, Rng& rng,
                   StepOutcome* out) {
  const Eigen::Index n = log_ratio.size();
  out->accept_prob.resize(n);
  out->accepted.assign(n, 0);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double u = uniform01(rng);
    if (!finite_column(proposed, j, with_grad) || std::isnan(log_ratio[j])) {
      out->accept_prob[j] = 0.0;
      ++out->nonfinite;
      continue;
    }
    const double a = log_ratio[j] >= 0.0 ? 1.0 : std::exp(log_ratio[j]);
    out->accept_prob[j] = a;
    if (u < a) {
      out->accepted[j] = 1;
      out->x.col(j) = x_prop.col(j);
      out->current.log_p[j] = proposed.log_p[j];
      if (with_grad) out->current.grad.col(j) = proposed.grad.col(j);
    }
  }
}

}  // namespace

AnnealingSchedule AnnealingSchedule::linear(int n_intermediate) {
  if (n_intermediate < 0)
    throw ConfigError("number of intermediate distributions must be >= 0");
  AnnealingSchedule s;
  const int m = n_intermediate + 1;
  s.betas.resize(m + 1);
  for (int i = 0; i <= m; ++i)
    s.betas[i] = 1.0 - static_cast<double>(i) / static_cast<double>(m);
  s.betas.front() = 1.0;
  s.betas.back() = 0.0;
  return s;
}

void AnnealingSchedule::validate() const {
  if (betas.size() < 2) throw ConfigError("schedule needs at least two betas");
  if (betas.front() != 1.0 || betas.back() != 0.0)
    throw ConfigError("schedule must start at 1 and end at 0");
  for (std::size_t i = 1; i < betas.size(); ++i)
    if (!(betas[i] < betas[i - 1]))
      throw ConfigError("schedule must be strictly decreasing");
}

double intermediate_log_prob(double beta, double log_q0, double log_target) {
  if (beta == 1.0) return log_q0;
  if (beta == 0.0) return log_target;
  return beta * log_q0 + (1.0 - beta) * log_target;
}

HmcConfig HmcConfig::initial(int n_intermediate, int n_leapfrog) {
  HmcConfig c;
  c.n_leapfrog = n_leapfrog;
  c.eps_shared = 0.1;
  c.eps_per_dist.assign(std::max(n_intermediate, 0), 0.9);
  return c;
}

HmcConfig HmcConfig::fixed(int n_intermediate, double step, int n_leapfrog) {
  HmcConfig c;
  c.n_leapfrog = n_leapfrog;
  c.eps_shared = 0.0;
  c.eps_per_dist.assign(std::max(n_intermediate, 0), step);
  c.adapt = false;
  return c;
}

double HmcConfig::step_size(int dist_index) const {
  return eps_shared + eps_per_dist.at(dist_index);
}

void HmcConfig::validate(int n_intermediate) const {
  if (n_leapfrog < 1) throw ConfigError("hmc needs at least one leapfrog step");
  if (n_steps < 1) throw ConfigError("hmc needs at least one step per distribution");
  if (static_cast<int>(eps_per_dist.size()) != n_intermediate)
    throw ConfigError("hmc needs one step size per intermediate distribution");
  for (int i = 0; i < n_intermediate; ++i)
    if (!(step_size(i) > 0.0) || !std::isfinite(step_size(i)))
      throw ConfigError("hmc step sizes must be positive");
  if (!(target_accept > 0.0 && target_accept < 1.0))
    throw ConfigError("hmc target acceptance must lie in (0, 1)");
}

HmcConfig adapt_step_sizes(HmcConfig config, int dist_index,
                           double batch_mean_accept) {
  double& own = config.eps_per_dist.at(dist_index);
  if (batch_mean_accept > config.target_accept) {
    own *= config.up_per_dist;
    config.eps_shared *= config.up_shared;
  } else {
    own /= config.up_per_dist;
    config.eps_shared /= config.up_shared;
  }
  return config;
}

StepOutcome metropolis_step(const Points& x, const DensityValue& current,
                            const DensityFn& fn, double sigma, Rng& rng) {
  const Points prop = x + sigma * standard_normal(x.rows(), x.cols(), rng);
  const DensityValue pv = fn(prop);
  StepOutcome out{x, current, {}, {}, 0};
  const Eigen::VectorXd log_ratio = pv.log_p - current.log_p;
  accept_reject(log_ratio, pv, prop, false, rng, &out);
  return out;
}

void leapfrog(Points& x, Points& momentum, DensityValue& value,
              const DensityFn& fn, double eps, int n_steps) {
  momentum += 0.5 * eps * value.grad;
  for (int s = 0; s < n_steps; ++s) {
    x += eps * momentum;
    value = fn(x);
    if (s + 1 < n_steps) momentum += eps * value.grad;
  }
  momentum += 0.5 * eps * value.grad;
}

StepOutcome hmc_step(const Points& x, const DensityValue& current,
                     const DensityFn& fn, double eps, int n_leapfrog, Rng& rng) {
  Points p0 = standard_normal(x.rows(), x.cols(), rng);
  Points xp = x;
  Points p = p0;
  DensityValue pv = current;
  leapfrog(xp, p, pv, fn, eps, n_leapfrog);
  const Eigen::VectorXd kin0 = 0.5 * p0.colwise().squaredNorm().transpose();
  const Eigen::VectorXd kin1 = 0.5 * p.colwise().squaredNorm().transpose();
  Eigen::VectorXd log_ratio = (pv.log_p - kin1) - (current.log_p - kin0);
  for (Eigen::Index j = 0; j < log_ratio.size(); ++j)
    if (!p.col(j).allFinite() || !xp.col(j).allFinite()) log_ratio[j] = kNaN;
  StepOutcome out{x, current, {}, {}, 0};
  accept_reject(log_ratio, pv, xp, true, rng, &out);
  return out;
}

FixedPath::FixedPath(TargetPtr initial, TargetPtr target)
    : initial_(std::move(initial)), target_(std::move(target)) {
  if (!initial_ || !target_) throw ConfigError("path endpoints must be set");
  if (initial_->dim() != target_->dim())
    throw ConfigError("path endpoints differ in dimension");
  if (!initial_->has_exact_sampler())
    throw ConfigError("initial distribution needs an exact sampler");
}

FlowSample FixedPath::sample_initial(std::size_t n, Rng& rng) const {
  FlowSample s;
  s.xs = initial_->sample(n, rng);
  s.log_q = initial_->log_prob(s.xs);
  return s;
}

PathEval FixedPath::evaluate(const Points& x, bool with_grad) const {
  PathEval e;
  e.log_init = initial_->log_prob(x);
  e.log_target = target_->log_prob(x);
  if (with_grad) {
    e.grad_init = initial_->grad_log_prob(x);
    e.grad_target = target_->grad_log_prob(x);
  }
  return e;
}

GeometricTarget::GeometricTarget(TargetPtr p, TargetPtr q, double alpha)
    : p_(std::move(p)), q_(std::move(q)), alpha_(alpha) {
  if (!p_ || !q_ || p_->dim() != q_->dim())
    throw ConfigError("geometric target needs two densities of equal dimension");
}

Eigen::VectorXd GeometricTarget::log_prob(const Points& x) const {
  return alpha_ * p_->log_prob(x) + (1.0 - alpha_) * q_->log_prob(x);
}

Points GeometricTarget::grad_log_prob(const Points& x) const {
  return alpha_ * p_->grad_log_prob(x) + (1.0 - alpha_) * q_->grad_log_prob(x);
}

AisSampler::AisSampler(AnnealingSchedule schedule, KernelConfig kernel)
    : schedule_(std::move(schedule)), kernel_(std::move(kernel)) {
  schedule_.validate();
  if (auto* h = std::get_if<HmcConfig>(&kernel_))
    h->validate(schedule_.n_intermediate());
  if (auto* m = std::get_if<MetropolisConfig>(&kernel_)) {
    if (!(m->sigma > 0.0)) throw ConfigError("metropolis sigma must be positive");
    if (m->n_steps < 1) throw ConfigError("metropolis needs at least one step");
  }
}

void AisSampler::freeze() {
  if (auto* h = std::get_if<HmcConfig>(&kernel_)) h->adapt = false;
}

AisResult AisSampler::run(const AnnealingPath& path, std::size_t batch, Rng& rng) {
  if (batch == 0) throw ConfigError("AIS batch size must be positive");
  const bool hmc = std::holds_alternative<HmcConfig>(kernel_);
  const int n_inter = schedule_.n_intermediate();
  const auto& betas = schedule_.betas;

  FlowSample init = path.sample_initial(batch, rng);
  PathEval ev = path.evaluate_sampled(init, hmc);
  Points x = std::move(init.xs);
  const Eigen::Index n = x.cols();

  Eigen::VectorXd log_w = Eigen::VectorXd::Zero(n);
  std::vector<char> alive(n, 1);
  for (Eigen::Index j = 0; j < n; ++j) {
    bool ok = std::isfinite(ev.log_init[j]) && std::isfinite(ev.log_target[j]);
    if (hmc) ok = ok && ev.grad_init.col(j).allFinite() && ev.grad_target.col(j).allFinite();
    if (!ok) {
      alive[j] = 0;
      log_w[j] = kNaN;
    }
  }

  AisResult res;
  auto increment = [&](double beta, double beta_prev) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!alive[j]) continue;
      log_w[j] += intermediate_log_prob(beta, ev.log_init[j], ev.log_target[j]) -
                  intermediate_log_prob(beta_prev, ev.log_init[j], ev.log_target[j]);
    }
  };

  for (int k = 1; k <= n_inter; ++k) {
    const double beta = betas[k];
    increment(beta, betas[k - 1]);
    if (std::holds_alternative<IdentityKernel>(kernel_)) continue;

    PathEval last;
    DensityFn fn = [&](const Points& xp) {
      last = path.evaluate(xp, hmc);
      DensityValue v;
      v.log_p = beta * last.log_init + (1.0 - beta) * last.log_target;
      if (hmc) v.grad = beta * last.grad_init + (1.0 - beta) * last.grad_target;
      return v;
    };
    DensityValue cur;
    cur.log_p = beta * ev.log_init + (1.0 - beta) * ev.log_target;
    if (hmc) cur.grad = beta * ev.grad_init + (1.0 - beta) * ev.grad_target;

    const int n_steps = hmc ? std::get<HmcConfig>(kernel_).n_steps
                            : std::get<MetropolisConfig>(kernel_).n_steps;
    double accept_sum = 0.0;
    double eps = 0.0;
    for (int s = 0; s < n_steps; ++s) {
      StepOutcome step;
      if (hmc) {
        eps = std::get<HmcConfig>(kernel_).step_size(k - 1);
        step = hmc_step(x, cur, fn, eps, std::get<HmcConfig>(kernel_).n_leapfrog, rng);
      } else {
        eps = std::get<MetropolisConfig>(kernel_).sigma;
        step = metropolis_step(x, cur, fn, eps, rng);
      }
      for (Eigen::Index j = 0; j < n; ++j) {
        if (!step.accepted[j]) continue;
        ev.log_init[j] = last.log_init[j];
        ev.log_target[j] = last.log_target[j];
        if (hmc) {
          ev.grad_init.col(j) = last.grad_init.col(j);
          ev.grad_target.col(j) = last.grad_target.col(j);
        }
      }
      x = std::move(step.x);
      cur = std::move(step.current);
      res.diagnostics.nonfinite_proposals += step.nonfinite;
      accept_sum += mean_finite(step.accept_prob, alive);
    }
    const double accept = accept_sum / n_steps;
    res.diagnostics.accept_rate.push_back(accept);
    res.diagnostics.step_size.push_back(eps);
    if (hmc && std::get<HmcConfig>(kernel_).adapt)
      kernel_ = adapt_step_sizes(std::get<HmcConfig>(kernel_), k - 1, accept);
  }
  increment(betas[n_inter + 1], betas[n_inter]);

  std::vector<Eigen::Index> keep;
  keep.reserve(n);
  for (Eigen::Index j = 0; j < n; ++j)
    if (alive[j] && std::isfinite(log_w[j])) keep.push_back(j);
  res.diagnostics.dropped = static_cast<std::size_t>(n) - keep.size();
  if (keep.empty()) throw EmptyBatchError("every AIS chain produced a non-finite weight");

  const auto m = static_cast<Eigen::Index>(keep.size());
  res.xs.resize(x.rows(), m);
  res.log_ws.resize(m);
  res.log_init.resize(m);
  res.log_target.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index j = keep[i];
    res.xs.col(i) = x.col(j);
    res.log_ws[i] = log_w[j];
    res.log_init[i] = ev.log_init[j];
    res.log_target[i] = ev.log_target[j];
  }
  const double mx = res.log_ws.maxCoeff();
  res.diagnostics.log_mean_weight =
      mx + std::log((res.log_ws.array() - mx).exp().sum()) - std::log(static_cast<double>(m));
  return res;
}

}  // namespace fab
