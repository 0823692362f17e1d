#include "fab/targets.hpp"

#include <cmath>
#include <utility>

#include <Eigen/Cholesky>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "fab/errors.hpp"

namespace fab {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;

double doublewell_x1_log_unnorm(double x) {
  const double x2 = x * x;
  return -x2 * x2 + 6.0 * x2 + 0.5 * x;
}

double doublewell_x1_grad(double x) { return -4.0 * x * x * x + 12.0 * x + 0.5; }

double log_normal_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * kLogTwoPi;
}

// Proposal for the x1 rejection sampler.
constexpr double kPropWeightNeg = 0.2;
constexpr double kPropWeightPos = 0.8;
constexpr double kPropMean = 1.7;
constexpr double kPropSd = 0.5;

double proposal_log_pdf(double x) {
  const double a = std::log(kPropWeightNeg) + log_normal_pdf(x, -kPropMean, kPropSd);
  const double b = std::log(kPropWeightPos) + log_normal_pdf(x, kPropMean, kPropSd);
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

Eigen::VectorXd logsumexp_cols(const Eigen::MatrixXd& m) {
  Eigen::VectorXd out(m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const double mx = m.col(j).maxCoeff();
    if (!std::isfinite(mx)) {
      out[j] = mx;
      continue;
    }
    out[j] = mx + std::log((m.col(j).array() - mx).exp().sum());
  }
  return out;
}

void check_dim(const Points& x, int dim) {
  if (x.rows() != dim)
    throw ConfigError("point dimension " + std::to_string(x.rows()) +
                      " does not match target dimension " + std::to_string(dim));
}

}  // namespace

// ---------------------------------------------------------------------------
// TargetDensity

Points TargetDensity::sample(std::size_t, Rng&) const {
  throw ConfigError("target '" + name() + "' has no exact sampler");
}

double TargetDensity::log_prob_at(const Eigen::VectorXd& x) const {
  return log_prob(Points(x))[0];
}

Eigen::VectorXd TargetDensity::grad_at(const Eigen::VectorXd& x) const {
  return grad_log_prob(Points(x)).col(0);
}

// ---------------------------------------------------------------------------
// Double Well

double doublewell_logprob(double x1, double x2) {
  return doublewell_x1_log_unnorm(x1) - 0.5 * x2 * x2;
}

double doublewell_z1() {
  static const double z1 = [] {
    using boost::math::quadrature::gauss_kronrod;
    double error = 0.0;
    const auto f = [](double x) { return std::exp(doublewell_x1_log_unnorm(x)); };
    // Beyond |x| = 8 the integrand is below exp(-3700).
    const double value =
        gauss_kronrod<double, 61>::integrate(f, -8.0, 8.0, 20, 1e-13, &error);
    if (!std::isfinite(value) || error > 1e-9 * value)
      throw QuadratureError("Double Well normaliser quadrature did not converge");
    return value;
  }();
  return z1;
}

double doublewell_z2() { return std::sqrt(2.0 * M_PI); }

double manywell_log_z(int n_pairs) {
  if (n_pairs < 1) throw ConfigError("n_pairs must be at least 1");
  return n_pairs * (std::log(doublewell_z1()) + std::log(doublewell_z2()));
}

Points doublewell_exact_sample(std::size_t n, Rng& rng, RejectionStats* stats) {
  if (n == 0) throw ConfigError("sample count must be at least 1");
  const double log_k = std::log(3.0 * doublewell_z1());
  std::normal_distribution<double> normal(0.0, 1.0);
  Points out(2, static_cast<Eigen::Index>(n));
  std::size_t filled = 0;
  RejectionStats local;
  while (filled < n) {
    const double mean = uniform01(rng) < kPropWeightNeg ? -kPropMean : kPropMean;
    const double x = mean + kPropSd * normal(rng);
    const double log_ratio =
        doublewell_x1_log_unnorm(x) - log_k - proposal_log_pdf(x);
    ++local.proposed;
    if (log_ratio > 0.0)
      throw EnvelopeError("rejection envelope violated at x1 = " + std::to_string(x));
    if (std::log(uniform01(rng)) < log_ratio) {
      out(0, static_cast<Eigen::Index>(filled)) = x;
      ++filled;
      ++local.accepted;
    }
  }
  for (std::size_t i = 0; i < n; ++i) out(1, static_cast<Eigen::Index>(i)) = normal(rng);
  if (stats) *stats = local;
  return out;
}

ManyWell::ManyWell(int n_pairs) : n_pairs_(n_pairs), log_z_(manywell_log_z(n_pairs)) {}

std::string ManyWell::name() const {
  return "manywell" + std::to_string(2 * n_pairs_);
}

Eigen::VectorXd ManyWell::log_prob(const Points& x) const {
  check_dim(x, dim());
  Eigen::VectorXd out = Eigen::VectorXd::Zero(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (int k = 0; k < n_pairs_; ++k)
      out[j] += doublewell_logprob(x(2 * k, j), x(2 * k + 1, j));
  return out;
}

Points ManyWell::grad_log_prob(const Points& x) const {
  check_dim(x, dim());
  Points g(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (int k = 0; k < n_pairs_; ++k) {
      g(2 * k, j) = doublewell_x1_grad(x(2 * k, j));
      g(2 * k + 1, j) = -x(2 * k + 1, j);
    }
  }
  return g;
}

Points ManyWell::sample(std::size_t n, Rng& rng) const {
  Points out(dim(), static_cast<Eigen::Index>(n));
  for (int k = 0; k < n_pairs_; ++k) out.middleRows(2 * k, 2) = doublewell_exact_sample(n, rng);
  return out;
}

// ---------------------------------------------------------------------------
// Gaussian mixture

GmmSpec gmm40_build(std::uint64_t seed) {
  constexpr int kComponents = 40;
  constexpr double kLocScale = 40.0;
  GmmSpec spec;
  spec.seed = seed;
  spec.means.resize(2, kComponents);
  Rng rng(seed);
  std::uniform_real_distribution<double> uniform(-kLocScale, kLocScale);
  for (int k = 0; k < kComponents; ++k) {
    spec.means(0, k) = uniform(rng);
    spec.means(1, k) = uniform(rng);
  }
  spec.covs.assign(kComponents, Eigen::MatrixXd::Identity(2, 2));
  spec.weights = Eigen::VectorXd::Constant(kComponents, 1.0 / kComponents);
  return spec;
}

GaussianMixture::GaussianMixture(GmmSpec spec) : spec_(std::move(spec)) {
  const int k = spec_.n_components();
  const int d = spec_.dim();
  if (k < 1 || d < 1) throw ConfigError("mixture needs at least one component");
  if (static_cast<int>(spec_.covs.size()) != k || spec_.weights.size() != k)
    throw ConfigError("mixture means, covariances and weights disagree in count");
  if ((spec_.weights.array() < 0.0).any() ||
      std::abs(spec_.weights.sum() - 1.0) > 1e-12)
    throw ConfigError("mixture weights must be non-negative and sum to 1");
  log_norm_.resize(k);
  for (int c = 0; c < k; ++c) {
    const Eigen::MatrixXd& cov = spec_.covs[c];
    if (cov.rows() != d || cov.cols() != d)
      throw ConfigError("covariance has the wrong shape");
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success || !cov.isApprox(cov.transpose()))
      throw ConfigError("covariance " + std::to_string(c) + " is not SPD");
    Eigen::MatrixXd l = llt.matrixL();
    chol_.push_back(l);
    precisions_.push_back(llt.solve(Eigen::MatrixXd::Identity(d, d)));
    log_norm_[c] = std::log(spec_.weights[c]) - 0.5 * d * kLogTwoPi -
                   l.diagonal().array().log().sum();
  }
}

Eigen::MatrixXd GaussianMixture::component_log_probs(const Points& x) const {
  check_dim(x, dim());
  const int k = spec_.n_components();
  Eigen::MatrixXd out(k, x.cols());
  for (int c = 0; c < k; ++c) {
    Points diff = x.colwise() - spec_.means.col(c);
    const Points y = chol_[c].triangularView<Eigen::Lower>().solve(diff);
    out.row(c) = (-0.5 * y.colwise().squaredNorm()).array() + log_norm_[c];
  }
  return out;
}

Eigen::VectorXd GaussianMixture::log_prob(const Points& x) const {
  return logsumexp_cols(component_log_probs(x));
}

Points GaussianMixture::grad_log_prob(const Points& x) const {
  const Eigen::MatrixXd comp = component_log_probs(x);
  const Eigen::VectorXd lse = logsumexp_cols(comp);
  Points g = Points::Zero(x.rows(), x.cols());
  for (int c = 0; c < spec_.n_components(); ++c) {
    const Eigen::RowVectorXd resp = (comp.row(c) - lse.transpose()).array().exp();
    const Points diff = x.colwise() - spec_.means.col(c);
    g -= ((precisions_[c] * diff).array().rowwise() * resp.array()).matrix();
  }
  return g;
}

Points GaussianMixture::sample(std::size_t n, Rng& rng) const {
  std::discrete_distribution<int> pick(spec_.weights.data(),
                                       spec_.weights.data() + spec_.weights.size());
  Points out(dim(), static_cast<Eigen::Index>(n));
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd eps(dim());
  for (std::size_t i = 0; i < n; ++i) {
    const int c = pick(rng);
    for (int r = 0; r < dim(); ++r) eps[r] = normal(rng);
    out.col(static_cast<Eigen::Index>(i)) = spec_.means.col(c) + chol_[c] * eps;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Diagonal Gaussian

DiagonalGaussian::DiagonalGaussian(Eigen::VectorXd mean, Eigen::VectorXd stddev)
    : mean_(std::move(mean)), stddev_(std::move(stddev)) {
  if (mean_.size() < 1 || mean_.size() != stddev_.size())
    throw ConfigError("mean and stddev must be non-empty and equally long");
  if ((stddev_.array() <= 0.0).any()) throw ConfigError("stddev must be positive");
}

Eigen::VectorXd DiagonalGaussian::log_prob(const Points& x) const {
  check_dim(x, dim());
  const Eigen::ArrayXXd z =
      (x.colwise() - mean_).array().colwise() / stddev_.array();
  const double norm = 0.5 * dim() * kLogTwoPi + stddev_.array().log().sum();
  return (-0.5 * z.square().colwise().sum() - norm).transpose().matrix();
}

Points DiagonalGaussian::grad_log_prob(const Points& x) const {
  check_dim(x, dim());
  return -((x.colwise() - mean_).array().colwise() / stddev_.array().square())
              .matrix();
}

Points DiagonalGaussian::sample(std::size_t n, Rng& rng) const {
  Points z = standard_normal(dim(), static_cast<Eigen::Index>(n), rng);
  return ((z.array().colwise() * stddev_.array()).colwise() + mean_.array()).matrix();
}

// ---------------------------------------------------------------------------
// ScaledTarget

ScaledTarget::ScaledTarget(TargetPtr base, double log_c)
    : base_(std::move(base)), log_c_(log_c) {
  if (!base_) throw ConfigError("scaled target needs a base");
}

Eigen::VectorXd ScaledTarget::log_prob(const Points& x) const {
  Eigen::VectorXd v = base_->log_prob(x);
  v.array() += log_c_;
  return v;
}

Points ScaledTarget::grad_log_prob(const Points& x) const {
  return base_->grad_log_prob(x);
}

std::optional<double> ScaledTarget::log_z() const {
  auto z = base_->log_z();
  if (!z) return std::nullopt;
  return *z + log_c_;
}

Points ScaledTarget::sample(std::size_t n, Rng& rng) const {
  return base_->sample(n, rng);
}

// ---------------------------------------------------------------------------
// Gaussian pair

double GaussianPair::integral_p2_over_q(const Eigen::VectorXd& mu_q) const {
  return std::exp((p->mean() - mu_q).squaredNorm());
}

Eigen::VectorXd GaussianPair::grad_integral_p2_over_q(
    const Eigen::VectorXd& mu_q) const {
  return 2.0 * (mu_q - p->mean()) * integral_p2_over_q(mu_q);
}

GaussianPair factorized_gaussians(int dim) {
  if (dim < 1) throw ConfigError("dimension must be at least 1");
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(dim);
  return {std::make_shared<DiagonalGaussian>(-0.5 * ones, ones),
          std::make_shared<DiagonalGaussian>(0.5 * ones, ones)};
}

GaussianPair gaussian_pair_1d() { return factorized_gaussians(1); }

// ---------------------------------------------------------------------------
// Quadratic function

QuadraticCoeffs quadratic_coeffs(int dim, std::uint64_t seed) {
  Rng rng(seed);
  QuadraticCoeffs k;
  k.a = standard_normal(dim, 1, rng).col(0);
  k.b = standard_normal(dim, 1, rng).col(0);
  k.c = standard_normal(dim, dim, rng);
  return k;
}

double quadratic_f(const Eigen::VectorXd& x, const QuadraticCoeffs& k) {
  const Eigen::VectorXd y = x - 2.0 * k.b;
  return k.a.dot(y) + 2.0 * y.dot(k.c * y);
}

Eigen::VectorXd quadratic_f(const Points& x, const QuadraticCoeffs& k) {
  const Points y = x.colwise() - 2.0 * k.b;
  const Points cy = k.c * y;
  return (k.a.transpose() * y).transpose() +
         2.0 * (y.array() * cy.array()).colwise().sum().transpose().matrix();
}

double quadratic_expectation(const GmmSpec& gmm, const QuadraticCoeffs& k) {
  double out = 0.0;
  for (int c = 0; c < gmm.n_components(); ++c) {
    const Eigen::VectorXd m = gmm.means.col(c) - 2.0 * k.b;
    const double quad = m.dot(k.c * m) + (k.c * gmm.covs[c]).trace();
    out += gmm.weights[c] * (k.a.dot(m) + 2.0 * quad);
  }
  return out;
}

}  // namespace fab
