#include <cmath>

#include <gtest/gtest.h>

#include "fab/ais.hpp"
#include "fab/errors.hpp"
#include "test_util.hpp"

namespace fab {
namespace {

std::shared_ptr<DiagonalGaussian> gaussian(Eigen::VectorXd mean, double sd) {
  const auto d = mean.size();
  return std::make_shared<DiagonalGaussian>(std::move(mean), Eigen::VectorXd::Constant(d, sd));
}

TEST(Schedule, LinearEndpointsAndSpacing) {
  AnnealingSchedule s = AnnealingSchedule::linear(4);
  ASSERT_EQ(s.betas.size(), 6u);
  EXPECT_EQ(s.betas.front(), 1.0);
  EXPECT_EQ(s.betas.back(), 0.0);
  EXPECT_EQ(s.n_intermediate(), 4);
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(s.betas[i], 1.0 - i / 5.0, 1e-15);
  EXPECT_NO_THROW(s.validate());
}

TEST(Schedule, RejectsNonMonotone) {
  AnnealingSchedule s;
  s.betas = {1.0, 0.3, 0.5, 0.0};
  EXPECT_THROW(s.validate(), ConfigError);
  s.betas = {0.9, 0.0};
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(IntermediateLogProb, EndpointsAreExact) {
  EXPECT_EQ(intermediate_log_prob(1.0, -3.25, 7.0), -3.25);
  EXPECT_EQ(intermediate_log_prob(0.0, -3.25, 7.0), 7.0);
  EXPECT_DOUBLE_EQ(intermediate_log_prob(0.25, -4.0, 8.0), 0.25 * -4.0 + 0.75 * 8.0);
}

TEST(StepSizeAdaptation, GrowsAboveTargetShrinksOtherwise) {
  HmcConfig c = HmcConfig::initial(3);
  EXPECT_DOUBLE_EQ(c.step_size(0), 1.0);
  HmcConfig up = adapt_step_sizes(c, 1, 0.9);
  EXPECT_DOUBLE_EQ(up.eps_per_dist[1], 0.9 * 1.05);
  EXPECT_DOUBLE_EQ(up.eps_shared, 0.1 * 1.02);
  EXPECT_DOUBLE_EQ(up.eps_per_dist[0], 0.9);
  HmcConfig tie = adapt_step_sizes(c, 1, 0.65);
  EXPECT_DOUBLE_EQ(tie.eps_per_dist[1], 0.9 / 1.05);
  EXPECT_DOUBLE_EQ(tie.eps_shared, 0.1 / 1.02);
}

DensityFn gaussian_fn(const DiagonalGaussian& g, bool grad) {
  return [&g, grad](const Points& x) {
    DensityValue v;
    v.log_p = g.log_prob(x);
    if (grad) v.grad = g.grad_log_prob(x);
    return v;
  };
}

// Chains started in the stationary distribution must stay there.
void check_invariance(bool hmc) {
  Eigen::VectorXd mu(2);
  mu << 1.0, -2.0;
  DiagonalGaussian g(mu, Eigen::Vector2d(0.5, 2.0));
  DensityFn fn = gaussian_fn(g, hmc);
  Rng rng(hmc ? 3 : 4);
  const int n = 20000;
  Points x = g.sample(n, rng);
  DensityValue cur = fn(x);
  double accept = 0;
  for (int s = 0; s < 20; ++s) {
    StepOutcome o = hmc ? hmc_step(x, cur, fn, 0.3, 5, rng)
                        : metropolis_step(x, cur, fn, 1.0, rng);
    x = o.x;
    cur = o.current;
    accept += o.accept_prob.mean() / 20;
  }
  EXPECT_GT(accept, 0.2);
  Eigen::Vector2d mean = x.rowwise().mean();
  EXPECT_NEAR(mean[0], 1.0, 5 * 0.5 / std::sqrt(n));
  EXPECT_NEAR(mean[1], -2.0, 5 * 2.0 / std::sqrt(n));
  Eigen::Vector2d var = (x.colwise() - mean).array().square().rowwise().mean();
  EXPECT_NEAR(var[0], 0.25, 0.02);
  EXPECT_NEAR(var[1], 4.0, 0.3);
  EXPECT_TRUE(cur.log_p.isApprox(g.log_prob(x), 1e-12));
}

TEST(Kernels, MetropolisLeavesTargetInvariant) { check_invariance(false); }
TEST(Kernels, HmcLeavesTargetInvariant) { check_invariance(true); }

TEST(Kernels, LeapfrogEnergyErrorIsSecondOrder) {
  DiagonalGaussian g(Eigen::VectorXd::Zero(2), Eigen::Vector2d(1.0, 0.7));
  DensityFn fn = gaussian_fn(g, true);
  auto energy_error = [&](double eps) {
    Points x(2, 1), p(2, 1);
    x << 0.5, -0.3;
    p << 0.8, 0.2;
    DensityValue v = fn(x);
    const double h0 = -v.log_p[0] + 0.5 * p.squaredNorm();
    leapfrog(x, p, v, fn, eps, static_cast<int>(std::round(1.0 / eps)));
    return std::abs(-v.log_p[0] + 0.5 * p.squaredNorm() - h0);
  };
  const double ratio = energy_error(0.02) / energy_error(0.01);
  EXPECT_GT(ratio, 3.0);
  EXPECT_LT(ratio, 5.0);
}

TEST(Kernels, LeapfrogIsReversible) {
  ManyWell mw(1);
  DensityFn fn = [&](const Points& x) { return DensityValue{mw.log_prob(x), mw.grad_log_prob(x)}; };
  Points x(2, 1), p(2, 1);
  x << 0.4, 0.1;
  p << 1.0, -0.5;
  const Points x0 = x;
  DensityValue v = fn(x);
  leapfrog(x, p, v, fn, 0.05, 10);
  p = -p;
  leapfrog(x, p, v, fn, 0.05, 10);
  EXPECT_LT((x - x0).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Kernels, NonFiniteProposalsAreRejected) {
  DensityFn fn = [](const Points& x) {
    DensityValue v;
    v.log_p = -0.5 * x.colwise().squaredNorm().transpose();
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      if (x(0, j) > 0) v.log_p[j] = std::nan("");
    return v;
  };
  Rng rng(1);
  Points x = Points::Constant(1, 500, -0.1);
  DensityValue cur = fn(x);
  StepOutcome o = metropolis_step(x, cur, fn, 1.0, rng);
  EXPECT_GT(o.nonfinite, 0u);
  EXPECT_TRUE((o.x.array() <= 0).all());
  EXPECT_TRUE(o.current.log_p.allFinite());
}

TEST(Ais, IdentityKernelReducesToImportanceWeights) {
  auto q = gaussian(Eigen::VectorXd::Zero(2), 1.5);
  auto p = std::make_shared<ScaledTarget>(gaussian(Eigen::VectorXd::Ones(2), 0.8), 2.0);
  FixedPath path(q, p);
  for (int m : {0, 1, 7}) {
    AisSampler ais(AnnealingSchedule::linear(m), IdentityKernel{});
    Rng rng(9);
    AisResult r = ais.run(path, 100, rng);
    Eigen::VectorXd expect = p->log_prob(r.xs) - q->log_prob(r.xs);
    EXPECT_LT((r.log_ws - expect).cwiseAbs().maxCoeff(), 1e-12) << "m = " << m;
    EXPECT_LT((r.log_init - q->log_prob(r.xs)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Ais, SingleStepWeightIsExactRatio) {
  auto q = gaussian(Eigen::VectorXd::Zero(1), 1.0);
  auto p = gaussian(Eigen::VectorXd::Ones(1), 2.0);
  FixedPath path(q, p);
  AisSampler ais(AnnealingSchedule::linear(0), MetropolisConfig{});
  Rng rng(1);
  AisResult r = ais.run(path, 50, rng);
  EXPECT_TRUE(r.log_ws.isApprox(p->log_prob(r.xs) - q->log_prob(r.xs), 0.0));
}

// E_q[w] equals the normalising constant of the target for any kernel.
void check_unbiased(KernelConfig kernel, int n_inter, std::uint64_t seed) {
  auto q = gaussian(Eigen::VectorXd::Zero(2), 1.0);
  const double log_c = 1.7;
  auto p = std::make_shared<ScaledTarget>(gaussian(Eigen::Vector2d(1.5, -1.0), 0.7), log_c);
  FixedPath path(q, p);
  AisSampler ais(AnnealingSchedule::linear(n_inter), std::move(kernel));
  Rng rng(seed);
  AisResult r = ais.run(path, 40000, rng);
  Eigen::VectorXd w = (r.log_ws.array() - log_c).exp();
  const double se = std::sqrt((w.array() - w.mean()).square().mean() / w.size());
  EXPECT_NEAR(w.mean(), 1.0, 5 * se + 1e-3);
  EXPECT_LT(se, 0.05);
}

TEST(Ais, UnbiasedWithMetropolis) { check_unbiased(MetropolisConfig{1.0, 1}, 4, 11); }
TEST(Ais, UnbiasedWithHmc) { check_unbiased(HmcConfig::fixed(4, 0.3), 4, 12); }
TEST(Ais, UnbiasedWithAdaptiveHmc) { check_unbiased(HmcConfig::initial(3), 3, 13); }

TEST(Ais, MoreIntermediatesReduceWeightVariance) {
  auto q = gaussian(Eigen::VectorXd::Zero(2), 1.0);
  auto p = gaussian(Eigen::Vector2d(2.0, -2.0), 0.5);
  FixedPath path(q, p);
  auto var_of = [&](int m) {
    AisSampler ais(AnnealingSchedule::linear(m), HmcConfig::fixed(m, 0.3));
    Rng rng(4);
    AisResult r = ais.run(path, 5000, rng);
    Eigen::VectorXd w = r.log_ws.array().exp();
    return (w.array() - w.mean()).square().mean();
  };
  EXPECT_LT(var_of(16), var_of(1));
}

TEST(Ais, AdaptationMovesTowardTargetAcceptance) {
  auto q = gaussian(Eigen::VectorXd::Zero(2), 2.0);
  auto p = std::make_shared<ManyWell>(1);
  FixedPath path(q, p);
  AisSampler ais(AnnealingSchedule::linear(2), HmcConfig::initial(2));
  Rng rng(3);
  for (int i = 0; i < 40; ++i) ais.run(path, 256, rng);
  double accept = 0;
  for (int i = 0; i < 20; ++i) accept += ais.run(path, 256, rng).diagnostics.accept_rate.back() / 20;
  EXPECT_NEAR(accept, 0.65, 0.1);
  const HmcConfig& h = std::get<HmcConfig>(ais.kernel());
  EXPECT_LT(h.step_size(1), 1.0);
  ais.freeze();
  const double before = std::get<HmcConfig>(ais.kernel()).step_size(1);
  ais.run(path, 64, rng);
  EXPECT_EQ(std::get<HmcConfig>(ais.kernel()).step_size(1), before);
}

TEST(Ais, SameSeedSameResult) {
  auto q = gaussian(Eigen::VectorXd::Zero(2), 1.0);
  auto p = std::make_shared<ManyWell>(1);
  FixedPath path(q, p);
  auto run = [&] {
    AisSampler ais(AnnealingSchedule::linear(3), HmcConfig::initial(3));
    Rng rng(77);
    return ais.run(path, 64, rng);
  };
  AisResult a = run(), b = run();
  EXPECT_TRUE(a.xs.isApprox(b.xs, 0.0));
  EXPECT_TRUE(a.log_ws.isApprox(b.log_ws, 0.0));
}

struct HalfPlaneNaN final : TargetDensity {
  int dim() const override { return 1; }
  std::string name() const override { return "half_nan"; }
  Eigen::VectorXd log_prob(const Points& x) const override {
    Eigen::VectorXd v = -0.5 * x.row(0).transpose().array().square();
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      if (x(0, j) > threshold) v[j] = std::nan("");
    return v;
  }
  Points grad_log_prob(const Points& x) const override { return -x; }
  double threshold = 0.0;
};

TEST(Ais, NonFiniteChainsAreDroppedAndCounted) {
  auto q = gaussian(Eigen::VectorXd::Zero(1), 1.0);
  auto p = std::make_shared<HalfPlaneNaN>();
  FixedPath path(q, p);
  AisSampler ais(AnnealingSchedule::linear(2), MetropolisConfig{0.5, 1});
  Rng rng(2);
  AisResult r = ais.run(path, 1000, rng);
  EXPECT_GT(r.diagnostics.dropped, 300u);
  EXPECT_EQ(r.diagnostics.dropped + r.xs.cols(), 1000u);
  EXPECT_TRUE(r.log_ws.allFinite());
}

TEST(Ais, AllChainsNonFiniteThrows) {
  auto q = gaussian(Eigen::VectorXd::Zero(1), 1.0);
  auto p = std::make_shared<HalfPlaneNaN>();
  p->threshold = -100.0;
  FixedPath path(q, p);
  AisSampler ais(AnnealingSchedule::linear(1), MetropolisConfig{});
  Rng rng(2);
  EXPECT_THROW(ais.run(path, 10, rng), EmptyBatchError);
}

TEST(Ais, RejectsBadKernelConfig) {
  EXPECT_THROW(AisSampler(AnnealingSchedule::linear(3), HmcConfig::initial(2)), ConfigError);
  EXPECT_THROW(AisSampler(AnnealingSchedule::linear(1), MetropolisConfig{-1.0, 1}), ConfigError);
}

TEST(GeometricTarget, SquareOverQ) {
  auto p = gaussian(Eigen::VectorXd::Constant(1, -0.5), 1.0);
  auto q = gaussian(Eigen::VectorXd::Constant(1, 0.5), 1.0);
  GeometricTarget g(p, q, 2.0);
  Eigen::VectorXd x = Eigen::VectorXd::Constant(1, 0.3);
  EXPECT_NEAR(g.log_prob_at(x), 2 * p->log_prob_at(x) - q->log_prob_at(x), 1e-14);
  EXPECT_NEAR(g.grad_at(x)[0], 2 * p->grad_at(x)[0] - q->grad_at(x)[0], 1e-14);
}

TEST(IntermediateLogProb, MidpointOfBootstrapPathIsTarget) {
  const double lp = -1.7, lq = -0.4;
  EXPECT_NEAR(intermediate_log_prob(0.5, lq, 2.0 * lp - lq), lp, 1e-15);
}

TEST(StepSizeAdaptation, RepeatedFullAcceptanceClosedForm) {
  HmcConfig c = HmcConfig::initial(2);
  for (int k = 1; k <= 12; ++k) {
    c = adapt_step_sizes(c, 0, 1.0);
    EXPECT_NEAR(c.step_size(0), 0.1 * std::pow(1.02, k) + 0.9 * std::pow(1.05, k), 1e-12);
    EXPECT_NEAR(c.step_size(1), 0.1 * std::pow(1.02, k) + 0.9, 1e-12);
  }
}

TEST(Kernels, MetropolisAcceptsUphillMoves) {
  // log p increasing in x[0]: any proposal with larger x[0] is accepted.
  DensityFn fn = [](const Points& x) {
    DensityValue v;
    v.log_p = x.row(0).transpose();
    return v;
  };
  Rng rng(21);
  const Points x = Points::Zero(1, 5000);
  const StepOutcome o = metropolis_step(x, fn(x), fn, 1.0, rng);
  for (Eigen::Index i = 0; i < x.cols(); ++i)
    if (o.accept_prob[i] >= 1.0) EXPECT_TRUE(o.accepted[i]);
  for (Eigen::Index i = 0; i < x.cols(); ++i)
    if (o.x(0, i) > 0.0) EXPECT_EQ(o.accept_prob[i], 1.0);
}

TEST(Kernels, MetropolisTinyStepBarelyMoves) {
  DiagonalGaussian g(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Ones(2));
  DensityFn fn = gaussian_fn(g, false);
  Rng rng(22);
  const Points x = g.sample(2000, rng);
  const StepOutcome o = metropolis_step(x, fn(x), fn, 1e-8, rng);
  EXPECT_GT(o.accept_prob.mean(), 0.999999);
  EXPECT_LT((o.x - x).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Kernels, HmcTinyStepConservesEnergy) {
  DiagonalGaussian g(Eigen::Vector2d(1.0, -1.0), Eigen::Vector2d(0.5, 2.0));
  DensityFn fn = gaussian_fn(g, true);
  Rng rng(23);
  const Points x = g.sample(2000, rng);
  const StepOutcome o = hmc_step(x, fn(x), fn, 1e-4, 5, rng);
  EXPECT_GT(o.accept_prob.minCoeff(), 0.9999);
}

// 1000 chains for 1000 steps each, started in the stationary distribution.
void long_run_moments(bool hmc) {
  DiagonalGaussian g(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1));
  DensityFn fn = gaussian_fn(g, hmc);
  Rng rng(hmc ? 31 : 32);
  Points x = g.sample(1000, rng);
  DensityValue cur = fn(x);
  double sum = 0.0, sq = 0.0;
  const int steps = 1000;
  for (int s = 0; s < steps; ++s) {
    StepOutcome o = hmc ? hmc_step(x, cur, fn, 0.5, 5, rng) : metropolis_step(x, cur, fn, 5.0, rng);
    x = std::move(o.x);
    cur = std::move(o.current);
    sum += x.sum();
    sq += x.squaredNorm();
  }
  const double n = 1000.0 * steps;
  const double mean = sum / n;
  EXPECT_NEAR(mean, 0.0, 0.05);
  EXPECT_NEAR(sq / n - mean * mean, 1.0, 0.05);
}

TEST(Kernels, MetropolisWideStepMillionSteps) { long_run_moments(false); }
TEST(Kernels, HmcMillionSteps) { long_run_moments(true); }

TEST(Ais, BootstrapPairMeanWeightIsE) {
  const GaussianPair pair = gaussian_pair_1d();
  const auto target = std::make_shared<GeometricTarget>(pair.p, pair.q0, 2.0);
  FixedPath path(pair.q0, target);
  AisSampler ais(AnnealingSchedule::linear(3), HmcConfig::fixed(3, 0.5));
  Rng rng(41);
  double sum = 0.0;
  for (int b = 0; b < 200; ++b) sum += ais.run(path, 1000, rng).log_ws.array().exp().sum();
  EXPECT_NEAR(sum / 200000.0, std::exp(1.0), 0.05 * std::exp(1.0));
}

TEST(Ais, BootstrapPairWithoutIntermediatesIsRatio) {
  const GaussianPair pair = gaussian_pair_1d();
  const auto target = std::make_shared<GeometricTarget>(pair.p, pair.q0, 2.0);
  FixedPath path(pair.q0, target);
  AisSampler ais(AnnealingSchedule::linear(0), HmcConfig::fixed(0, 0.5));
  Rng rng(42);
  const AisResult r = ais.run(path, 500, rng);
  const Eigen::VectorXd ratio = target->log_prob(r.xs) - pair.q0->log_prob(r.xs);
  EXPECT_LT((r.log_ws - ratio).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Ais, ScalingTargetShiftsLogWeights) {
  auto q = gaussian(Eigen::VectorXd::Zero(2), 1.0);
  auto p = std::make_shared<ManyWell>(1);
  const double log_c = std::log(7.5);
  auto scaled = std::make_shared<ScaledTarget>(p, log_c);
  for (KernelConfig k : {KernelConfig(MetropolisConfig{1.0, 2}), KernelConfig(HmcConfig::fixed(3, 0.3))}) {
    AisSampler a(AnnealingSchedule::linear(3), k), b(AnnealingSchedule::linear(3), k);
    Rng r1(43), r2(43);
    const AisResult x = a.run(FixedPath(q, p), 400, r1);
    const AisResult y = b.run(FixedPath(q, scaled), 400, r2);
    EXPECT_LT((y.log_ws.array() - x.log_ws.array() - log_c).abs().maxCoeff(), 1e-9);
    EXPECT_LT((y.xs - x.xs).cwiseAbs().maxCoeff(), 1e-9);
  }
}

}  // namespace
}  // namespace fab
