#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "fab/flow.hpp"
#include "fab/random.hpp"
#include "fab/targets.hpp"

namespace fab {

/// Interpolation weights on the initial log-density, from 1 down to 0.
/// betas[0] = 1 is the initial distribution, betas.back() = 0 the AIS target,
/// everything in between is an intermediate distribution.
struct AnnealingSchedule {
  std::vector<double> betas{1.0, 0.0};

  static AnnealingSchedule linear(int n_intermediate);

  int n_intermediate() const { return static_cast<int>(betas.size()) - 2; }
  // Strictly decreasing with exact endpoints, else ConfigError.
  void validate() const;
};

// beta * log_q0 + (1 - beta) * log_target. Non-finite inputs propagate.
double intermediate_log_prob(double beta, double log_q0, double log_target);

// ---------------------------------------------------------------------------
// Transition kernels

struct MetropolisConfig {
  double sigma = 5.0;
  int n_steps = 1;
};

/// HMC with per-distribution step sizes eps_n = eps_shared + eps_per_dist[n].
struct HmcConfig {
  int n_leapfrog = 5;
  int n_steps = 1;
  double eps_shared = 0.1;
  std::vector<double> eps_per_dist;  // one per intermediate distribution
  double target_accept = 0.65;
  double up_per_dist = 1.05;
  double up_shared = 1.02;
  bool adapt = true;

  // eps_shared = 0.1 and eps_per_dist = 0.9 everywhere: a step of 1.0.
  static HmcConfig initial(int n_intermediate, int n_leapfrog = 5);
  // No adaptation, eps_shared = 0 and the given step everywhere.
  static HmcConfig fixed(int n_intermediate, double step, int n_leapfrog = 5);

  double step_size(int dist_index) const;
  void validate(int n_intermediate) const;
};

// Leaves the state untouched; reduces AIS to plain importance sampling along
// the schedule.
struct IdentityKernel {};

using KernelConfig = std::variant<MetropolisConfig, HmcConfig, IdentityKernel>;

/// Multiplies eps_per_dist[dist_index] by 1.05 and eps_shared by 1.02 when
/// the batch acceptance exceeds the target, divides otherwise (a tie takes
/// the shrink branch).
HmcConfig adapt_step_sizes(HmcConfig config, int dist_index,
                           double batch_mean_accept);

struct DensityValue {
  Eigen::VectorXd log_p;
  Points grad;  // empty unless the kernel needs gradients
};

// Batched log-density. The kernels below always make their last call at the
// proposal they accept or reject, which callers may rely on for caching.
using DensityFn = std::function<DensityValue(const Points&)>;

struct StepOutcome {
  Points x;
  DensityValue current;
  Eigen::VectorXd accept_prob;
  std::vector<char> accepted;
  std::size_t nonfinite = 0;  // proposals auto-rejected as non-finite
};

// Random-walk Metropolis: propose x + sigma N(0, I), accept with
// min(1, exp(delta log p)).
StepOutcome metropolis_step(const Points& x, const DensityValue& current,
                            const DensityFn& fn, double sigma, Rng& rng);

// Resamples unit momentum, runs `n_leapfrog` leapfrog steps and accepts on
// the Hamiltonian. `current` must carry gradients.
StepOutcome hmc_step(const Points& x, const DensityValue& current,
                     const DensityFn& fn, double eps, int n_leapfrog, Rng& rng);

// In-place leapfrog integration; `value` must hold log p and its gradient at
// `x` on entry and is updated to the end point.
void leapfrog(Points& x, Points& momentum, DensityValue& value,
              const DensityFn& fn, double eps, int n_steps);

// ---------------------------------------------------------------------------
// AIS forward pass

struct PathEval {
  Eigen::VectorXd log_init;
  Eigen::VectorXd log_target;
  Points grad_init;    // only filled when gradients were requested
  Points grad_target;
};

/// The two endpoints an AIS pass interpolates between.
class AnnealingPath {
 public:
  virtual ~AnnealingPath() = default;
  virtual int dim() const = 0;
  // Exact draws from the initial distribution with their log-density.
  virtual FlowSample sample_initial(std::size_t n, Rng& rng) const = 0;
  virtual PathEval evaluate(const Points& x, bool with_grad) const = 0;
  // Same as evaluate on freshly drawn initial samples; lets paths reuse the
  // log-density returned by sample_initial.
  virtual PathEval evaluate_sampled(const FlowSample& s, bool with_grad) const {
    return evaluate(s.xs, with_grad);
  }
};

/// Path between two fixed densities. The initial density must be normalised
/// and exactly samplable.
class FixedPath final : public AnnealingPath {
 public:
  FixedPath(TargetPtr initial, TargetPtr target);

  int dim() const override { return initial_->dim(); }
  FlowSample sample_initial(std::size_t n, Rng& rng) const override;
  PathEval evaluate(const Points& x, bool with_grad) const override;

 private:
  TargetPtr initial_;
  TargetPtr target_;
};

/// alpha log p + (1 - alpha) log q for two fixed densities; p^2/q at
/// alpha = 2.
class GeometricTarget final : public TargetDensity {
 public:
  GeometricTarget(TargetPtr p, TargetPtr q, double alpha);

  int dim() const override { return p_->dim(); }
  std::string name() const override { return "geometric"; }
  Eigen::VectorXd log_prob(const Points& x) const override;
  Points grad_log_prob(const Points& x) const override;

 private:
  TargetPtr p_;
  TargetPtr q_;
  double alpha_;
};

struct AisDiagnostics {
  std::vector<double> accept_rate;  // per intermediate distribution
  std::vector<double> step_size;    // step used at each intermediate
  std::size_t dropped = 0;
  std::size_t nonfinite_proposals = 0;
  double log_mean_weight = 0.0;
};

struct AisResult {
  Points xs;
  Eigen::VectorXd log_ws;
  Eigen::VectorXd log_init;    // initial log-density at the returned xs
  Eigen::VectorXd log_target;  // AIS-target log-density at the returned xs
  AisDiagnostics diagnostics;
};

/// Runs batched AIS. Holds the kernel configuration so that HMC step sizes
/// adapt across calls until `freeze()` is called.
class AisSampler {
 public:
  AisSampler(AnnealingSchedule schedule, KernelConfig kernel);

  // Throws EmptyBatchError if every chain ends with a non-finite weight.
  AisResult run(const AnnealingPath& path, std::size_t batch, Rng& rng);

  void freeze();
  const KernelConfig& kernel() const { return kernel_; }
  const AnnealingSchedule& schedule() const { return schedule_; }

 private:
  AnnealingSchedule schedule_;
  KernelConfig kernel_;
};

}  // namespace fab
