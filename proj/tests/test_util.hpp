#pragma once

#include <cmath>
#include <functional>

#include <Eigen/Core>
#include <Eigen/LU>
#include <boost/math/quadrature/gauss.hpp>

#include "fab/flow.hpp"
#include "fab/random.hpp"
#include "fab/targets.hpp"

namespace fab::testing {

// Central differences of a scalar function, step h per coordinate.
inline Eigen::VectorXd central_difference(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& at, double h = 1e-5) {
  Eigen::VectorXd g(at.size());
  Eigen::VectorXd x = at;
  for (Eigen::Index i = 0; i < at.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Identity-initialised flow with its parameters jittered so that every
// layer does something.
inline FlowModel perturbed_flow(const FlowArchitecture& arch, std::uint64_t seed,
                                double scale = 0.3) {
  FlowModel m(arch, seed);
  Rng rng(seed + 17);
  Eigen::VectorXd p = m.params() +
                      scale * standard_normal(m.num_params(), 1, rng).col(0);
  m.set_params(p);
  return m;
}

inline double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

// Integral of p log p for a 2D Gaussian mixture: per component, a product
// Gauss-Legendre rule over +-10 standard deviations.
inline double gmm_neg_entropy_2d(const GaussianMixture& gmm) {
  using Rule = boost::math::quadrature::gauss<double, 40>;
  const GmmSpec& s = gmm.spec();
  double total = 0.0;
  for (int k = 0; k < s.n_components(); ++k) {
    const Eigen::Vector2d mu = s.means.col(k);
    const Eigen::Matrix2d cov = s.covs[k];
    const double sx = std::sqrt(cov(0, 0)) * 10.0;
    const double sy = std::sqrt(cov(1, 1)) * 10.0;
    const double det = cov.determinant();
    const Eigen::Matrix2d prec = cov.inverse();
    auto inner = [&](double x) {
      return Rule::integrate(
          [&](double y) {
            const Eigen::Vector2d d(x - mu[0], y - mu[1]);
            const double dens =
                std::exp(-0.5 * d.dot(prec * d)) / (2.0 * 3.141592653589793 * std::sqrt(det));
            return dens * gmm.log_prob_at(Eigen::Vector2d(x, y));
          },
          mu[1] - sy, mu[1] + sy);
    };
    total += s.weights[k] * Rule::integrate(inner, mu[0] - sx, mu[0] + sx);
  }
  return total;
}

}  // namespace fab::testing
