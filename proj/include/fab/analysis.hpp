#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "fab/random.hpp"
#include "fab/targets.hpp"

namespace fab {

enum class EstimatorKind { is_q, is_p, ais_p, ais_p2q };

std::string to_string(EstimatorKind k);
EstimatorKind estimator_from_string(const std::string& s);

/// Settings for the estimators of d/dmu_q integral p^2/q on a Gaussian pair.
struct EstimatorSettings {
  int n_intermediate = 3;
  double hmc_step = 0.5;
  int n_leapfrog = 5;
};

// One estimate of the first coordinate of the mean-gradient of
// integral p^2/q at q = pair.q0:
//   is_q     -mean(w^2 (x - mu_q)),             x ~ q
//   is_p     -mean(w (x - mu_q)),               x ~ p
//   ais_p    -mean(w_ais w (x - mu_q)),          AIS q -> p
//   ais_p2q  -mean(w_ais (x - mu_q)),            AIS q -> p^2/q
// with w = p/q. All four are unbiased.
double grad_estimate(const GaussianPair& pair, EstimatorKind kind,
                     std::size_t n_samples, const EstimatorSettings& settings,
                     Rng& rng);

struct SnrPoint {
  double axis_value = 0.0;
  double snr = 0.0;
  double mean = 0.0;
  double std = 0.0;
  std::size_t reps = 0;
  std::size_t nonfinite = 0;
};

struct SnrSweepResult {
  EstimatorKind kind;
  std::string axis;  // "n_samples" or "n_dists"
  std::vector<SnrPoint> points;
};

struct SnrSweepSettings {
  std::string axis = "n_samples";
  std::vector<double> grid{100};
  std::size_t reps = 1000;
  std::size_t n_samples = 100;  // fixed value when sweeping n_dists
  EstimatorSettings estimator;  // n_intermediate is the fixed value otherwise
  std::uint64_t seed = 0;
  int threads = 1;
};

// |mean| / std over reps; throws Error when std is zero. Repetition r at
// grid point g uses its own stream, so results do not depend on threads.
SnrSweepResult snr_sweep(const GaussianPair& pair, EstimatorKind kind,
                         const SnrSweepSettings& settings);

void write_snr_csv(std::ostream& out, const std::vector<SnrSweepResult>& results);

struct ScalingRow {
  int dim = 0;
  double var_logw_fab = 0.0;
  double var_logw_isp = 0.0;
  double snr_fab = 0.0;
  double snr_isp = 0.0;
  std::size_t reps = 0;
};

struct ScalingSettings {
  std::vector<int> dims{2, 4, 8, 16};
  std::size_t n_samples = 100;
  std::size_t reps = 1000;
  double hmc_step = 0.5;
  int n_leapfrog = 5;
  std::uint64_t seed = 0;
  int threads = 1;
};

// Factorised Gaussians per dimension D with K = D intermediate
// distributions for the AIS estimator.
std::vector<ScalingRow> scaling_study(const ScalingSettings& settings);

void write_scaling_csv(std::ostream& out, const std::vector<ScalingRow>& rows);

}  // namespace fab
