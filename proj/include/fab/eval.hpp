#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "fab/ais.hpp"
#include "fab/flow.hpp"
#include "fab/targets.hpp"

namespace fab {

// 100 (sum w)^2 / (N sum w^2) over the finite entries of log_ws. Throws
// EmptyBatchError when none is finite.
double ess_percent(const Eigen::VectorXd& log_ws);

// mean(log_p - log_q) for normalised log p. Any non-finite log q makes the
// result non-finite (the tag for a missing mode).
double forward_kl(const Eigen::VectorXd& log_p_normalised,
                  const Eigen::VectorXd& log_q);
double forward_kl(const FlowModel& flow, const TargetDensity& target,
                  const Points& exact_samples);

/// Draws n points together with their log importance weights towards the
/// target.
using WeightedSampler =
    std::function<std::pair<Points, Eigen::VectorXd>(std::size_t, Rng&)>;

// Flow samples weighted by log p~ - log q.
WeightedSampler flow_sampler(const FlowModel& flow, TargetPtr target);
// Exact target samples with unit weights.
WeightedSampler exact_sampler(TargetPtr target);

struct MaeResult {
  double mae_percent = 0.0;
  std::size_t dropped = 0;  // repetitions with a non-finite estimate
};

// Mean over reps of |estimate - truth| / |truth| in percent, where each
// estimate is a self-normalised weighted average (reweight) or a plain
// average of f over n draws.
MaeResult expectation_mae(const WeightedSampler& sampler,
                          const std::function<Eigen::VectorXd(const Points&)>& f,
                          double truth, std::size_t n, std::size_t reps,
                          bool reweight, Rng& rng);

// Mean over reps of |Z_hat / Z - 1| in percent, Z_hat the mean unnormalised
// weight of n draws.
MaeResult logz_mae(const WeightedSampler& sampler, double log_z_true,
                   std::size_t n, std::size_t reps, Rng& rng);

// Fraction of centers (d x K) with at least one sample within
// radius_multiplier * sigma.
double mode_coverage(const Points& samples, const Eigen::MatrixXd& centers,
                     double sigma, double radius_multiplier = 3.0);

// Number of distinct sign patterns of the coordinates 0, 2, 4, ... that
// occur among the samples.
int sign_patterns_found(const Points& samples);

struct EvalSettings {
  std::size_t n_samples = 10000;     // flow draws for ESS and coverage
  std::size_t n_test = 10000;        // exact draws for KL and test log-lik
  std::size_t mae_samples = 1000;
  std::size_t mae_reps = 100;
  std::size_t logz_samples = 1000;
  std::size_t logz_reps = 50;
  std::uint64_t quadratic_seed = 0;
  bool ais_ess = false;
  int ais_intermediate = 1;
  KernelConfig ais_kernel = MetropolisConfig{};

  nlohmann::json to_json() const;
};

struct EvalReport {
  std::string target;
  double ess_percent = 0.0;  // NaN when no flow sample has a finite weight
  double forward_kl = 0.0;  // non-finite when a mode is missing
  double test_loglik = 0.0;
  std::optional<double> mae_percent;
  std::optional<double> mae_no_reweight_percent;
  double mode_coverage = 0.0;
  int modes_found = 0;
  int modes_total = 0;
  std::optional<double> logz_mae_percent;
  std::optional<double> ais_ess_percent;
  std::size_t dropped = 0;

  nlohmann::json to_json() const;
  static std::string csv_header();
  std::string csv_row() const;
};

// Target-specific pieces are chosen from the target type: GMMs get mode
// coverage and the quadratic expectation error, Many Well gets sign-pattern
// coverage and the normalising-constant error.
EvalReport evaluate_flow(const FlowModel& flow, TargetPtr target,
                         const EvalSettings& settings, Rng& rng);

}  // namespace fab
