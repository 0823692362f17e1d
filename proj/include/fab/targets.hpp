#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fab/flow.hpp"
#include "fab/random.hpp"

namespace fab {

/// Unnormalised target density with gradient and optional ground-truth
/// oracles. Implementations are immutable after construction.
class TargetDensity {
 public:
  virtual ~TargetDensity() = default;

  virtual int dim() const = 0;
  virtual std::string name() const = 0;

  // Unnormalised log-density for every column of x.
  virtual Eigen::VectorXd log_prob(const Points& x) const = 0;
  virtual Points grad_log_prob(const Points& x) const = 0;

  // log of the normalising constant of exp(log_prob), when known.
  virtual std::optional<double> log_z() const { return std::nullopt; }

  virtual bool has_exact_sampler() const { return false; }
  // Throws ConfigError when no exact sampler exists.
  virtual Points sample(std::size_t n, Rng& rng) const;

  double log_prob_at(const Eigen::VectorXd& x) const;
  Eigen::VectorXd grad_at(const Eigen::VectorXd& x) const;
};

using TargetPtr = std::shared_ptr<const TargetDensity>;

// ---------------------------------------------------------------------------
// Double Well / Many Well

// -x1^4 + 6 x1^2 + x1/2 - x2^2/2, additive constant fixed to zero.
double doublewell_logprob(double x1, double x2);

// Normalising constant of exp(-x^4 + 6x^2 + x/2), by adaptive Gauss-Kronrod
// quadrature. Throws QuadratureError if the error estimate is too large.
double doublewell_z1();
// sqrt(2 pi), the normaliser of the Gaussian x2 factor.
double doublewell_z2();

double manywell_log_z(int n_pairs);

struct RejectionStats {
  std::size_t proposed = 0;
  std::size_t accepted = 0;
};

// Exact samples (2 x n) from one Double Well factor. x1 uses rejection
// sampling from the mixture 0.2 N(-1.7, 0.5^2) + 0.8 N(1.7, 0.5^2) with
// envelope constant k = 3 Z1; x2 is standard normal.
Points doublewell_exact_sample(std::size_t n, Rng& rng,
                               RejectionStats* stats = nullptr);

class ManyWell final : public TargetDensity {
 public:
  explicit ManyWell(int n_pairs);

  int dim() const override { return 2 * n_pairs_; }
  int n_pairs() const { return n_pairs_; }
  std::string name() const override;
  Eigen::VectorXd log_prob(const Points& x) const override;
  Points grad_log_prob(const Points& x) const override;
  std::optional<double> log_z() const override { return log_z_; }
  bool has_exact_sampler() const override { return true; }
  Points sample(std::size_t n, Rng& rng) const override;

 private:
  int n_pairs_;
  double log_z_;
};

// ---------------------------------------------------------------------------
// Gaussian mixtures

struct GmmSpec {
  Eigen::MatrixXd means;                 // d x K
  std::vector<Eigen::MatrixXd> covs;     // K SPD d x d matrices
  Eigen::VectorXd weights;               // K, sums to one
  std::uint64_t seed = 0;

  int dim() const { return static_cast<int>(means.rows()); }
  int n_components() const { return static_cast<int>(means.cols()); }
};

// 40 components with means uniform in [-40, 40]^2, identity covariances and
// uniform weights.
GmmSpec gmm40_build(std::uint64_t seed);

/// Normalised Gaussian mixture (log_z = 0) with ancestral exact sampling.
class GaussianMixture final : public TargetDensity {
 public:
  explicit GaussianMixture(GmmSpec spec);

  int dim() const override { return spec_.dim(); }
  std::string name() const override { return "gmm"; }
  Eigen::VectorXd log_prob(const Points& x) const override;
  Points grad_log_prob(const Points& x) const override;
  std::optional<double> log_z() const override { return 0.0; }
  bool has_exact_sampler() const override { return true; }
  Points sample(std::size_t n, Rng& rng) const override;

  const GmmSpec& spec() const { return spec_; }
  // Per-component log-density (including log weight), K x n.
  Eigen::MatrixXd component_log_probs(const Points& x) const;

 private:
  GmmSpec spec_;
  std::vector<Eigen::MatrixXd> precisions_;
  std::vector<Eigen::MatrixXd> chol_;
  Eigen::VectorXd log_norm_;  // log weight - log normaliser per component
};

// ---------------------------------------------------------------------------
// Gaussians with diagonal covariance

class DiagonalGaussian final : public TargetDensity {
 public:
  DiagonalGaussian(Eigen::VectorXd mean, Eigen::VectorXd stddev);

  int dim() const override { return static_cast<int>(mean_.size()); }
  std::string name() const override { return "diagonal_gaussian"; }
  Eigen::VectorXd log_prob(const Points& x) const override;
  Points grad_log_prob(const Points& x) const override;
  std::optional<double> log_z() const override { return 0.0; }
  bool has_exact_sampler() const override { return true; }
  Points sample(std::size_t n, Rng& rng) const override;

  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::VectorXd& stddev() const { return stddev_; }

 private:
  Eigen::VectorXd mean_;
  Eigen::VectorXd stddev_;
};

/// exp(log_c) times another target's unnormalised density.
class ScaledTarget final : public TargetDensity {
 public:
  ScaledTarget(TargetPtr base, double log_c);

  int dim() const override { return base_->dim(); }
  std::string name() const override { return base_->name(); }
  Eigen::VectorXd log_prob(const Points& x) const override;
  Points grad_log_prob(const Points& x) const override;
  std::optional<double> log_z() const override;
  bool has_exact_sampler() const override { return base_->has_exact_sampler(); }
  Points sample(std::size_t n, Rng& rng) const override;

 private:
  TargetPtr base_;
  double log_c_;
};

/// Unit-variance Gaussians p = N(-0.5 1, I) and initial q = N(0.5 1, I) used
/// by the gradient-estimator studies, with closed-form oracles for
/// integral p^2/q as a function of the mean of q.
struct GaussianPair {
  std::shared_ptr<const DiagonalGaussian> p;
  std::shared_ptr<const DiagonalGaussian> q0;

  int dim() const { return p->dim(); }
  // integral p^2 / q_mu for q_mu = N(mu, I): exp(|mu_p - mu|^2).
  double integral_p2_over_q(const Eigen::VectorXd& mu_q) const;
  // Gradient of the above w.r.t. mu_q.
  Eigen::VectorXd grad_integral_p2_over_q(const Eigen::VectorXd& mu_q) const;
};

GaussianPair gaussian_pair_1d();
GaussianPair factorized_gaussians(int dim);

// ---------------------------------------------------------------------------
// Quadratic test function f(x) = a.(x - 2b) + 2 (x - 2b)' C (x - 2b)

struct QuadraticCoeffs {
  Eigen::VectorXd a;
  Eigen::VectorXd b;
  Eigen::MatrixXd c;
};

// Entries drawn from a standard normal with the given seed.
QuadraticCoeffs quadratic_coeffs(int dim, std::uint64_t seed);
double quadratic_f(const Eigen::VectorXd& x, const QuadraticCoeffs& k);
Eigen::VectorXd quadratic_f(const Points& x, const QuadraticCoeffs& k);
// Closed form E_p[f] from the first and second moments of each component.
double quadratic_expectation(const GmmSpec& gmm, const QuadraticCoeffs& k);

}  // namespace fab
