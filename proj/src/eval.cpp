#include "fab/eval.hpp"

#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "fab/csv.hpp"
#include "fab/errors.hpp"
#include "fab/losses.hpp"

namespace fab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

nlohmann::json number_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

nlohmann::json optional_number(const std::optional<double>& v) {
  if (!v) return nullptr;
  return number_or_null(*v);
}

}  // namespace

double ess_percent(const Eigen::VectorXd& log_ws) {
  std::vector<double> finite;
  for (Eigen::Index i = 0; i < log_ws.size(); ++i)
    if (std::isfinite(log_ws[i])) finite.push_back(log_ws[i]);
  if (finite.empty()) throw EmptyBatchError("no finite weight for the ESS");
  const Eigen::Map<const Eigen::VectorXd> lw(finite.data(), finite.size());
  const double log_num = 2.0 * log_sum_exp(lw);
  const double log_den = log_sum_exp(2.0 * lw) + std::log(static_cast<double>(lw.size()));
  return 100.0 * std::exp(log_num - log_den);
}

double forward_kl(const Eigen::VectorXd& log_p_normalised,
                  const Eigen::VectorXd& log_q) {
  if (log_p_normalised.size() != log_q.size() || log_q.size() == 0)
    throw ConfigError("forward KL needs equal, non-empty inputs");
  if (!log_q.allFinite()) return std::numeric_limits<double>::infinity();
  return (log_p_normalised - log_q).mean();
}

double forward_kl(const FlowModel& flow, const TargetDensity& target,
                  const Points& exact_samples) {
  const std::optional<double> log_z = target.log_z();
  if (!log_z) throw ConfigError("forward KL needs a target with a known normaliser");
  Eigen::VectorXd lp = target.log_prob(exact_samples);
  lp.array() -= *log_z;
  return forward_kl(lp, flow.log_prob(exact_samples));
}

WeightedSampler flow_sampler(const FlowModel& flow, TargetPtr target) {
  return [&flow, target](std::size_t n, Rng& rng) {
    FlowSample s = flow.sample(n, rng);
    Eigen::VectorXd lw = target->log_prob(s.xs) - s.log_q;
    return std::make_pair(std::move(s.xs), std::move(lw));
  };
}

WeightedSampler exact_sampler(TargetPtr target) {
  if (!target->has_exact_sampler()) throw ConfigError("target has no exact sampler");
  return [target](std::size_t n, Rng& rng) {
    Points x = target->sample(n, rng);
    return std::make_pair(std::move(x), Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n)).eval());
  };
}

MaeResult expectation_mae(const WeightedSampler& sampler,
                          const std::function<Eigen::VectorXd(const Points&)>& f,
                          double truth, std::size_t n, std::size_t reps,
                          bool reweight, Rng& rng) {
  if (truth == 0.0) throw ConfigError("relative error needs a non-zero truth");
  if (n == 0 || reps == 0) throw ConfigError("expectation MAE needs n, reps > 0");
  MaeResult out;
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t r = 0; r < reps; ++r) {
    auto [x, lw] = sampler(n, rng);
    const Eigen::VectorXd fx = f(x);
    double est = kNaN;
    if (reweight) {
      std::vector<Eigen::Index> keep;
      for (Eigen::Index i = 0; i < lw.size(); ++i)
        if (std::isfinite(lw[i]) && std::isfinite(fx[i])) keep.push_back(i);
      if (!keep.empty()) est = softmax(lw(keep)).dot(fx(keep));
    } else {
      est = fx.mean();
    }
    if (!std::isfinite(est)) {
      ++out.dropped;
      continue;
    }
    sum += std::abs(est - truth) / std::abs(truth);
    ++used;
  }
  out.mae_percent = used ? 100.0 * sum / static_cast<double>(used) : kNaN;
  return out;
}

MaeResult logz_mae(const WeightedSampler& sampler, double log_z_true,
                   std::size_t n, std::size_t reps, Rng& rng) {
  if (n == 0 || reps == 0) throw ConfigError("log Z MAE needs n, reps > 0");
  MaeResult out;
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t r = 0; r < reps; ++r) {
    auto [x, lw] = sampler(n, rng);
    (void)x;
    const double log_z_hat = log_sum_exp(lw) - std::log(static_cast<double>(n));
    const double err = std::abs(std::expm1(log_z_hat - log_z_true));
    if (!std::isfinite(err)) {
      ++out.dropped;
      continue;
    }
    sum += err;
    ++used;
  }
  out.mae_percent = used ? 100.0 * sum / static_cast<double>(used) : kNaN;
  return out;
}

double mode_coverage(const Points& samples, const Eigen::MatrixXd& centers,
                     double sigma, double radius_multiplier) {
  if (samples.rows() != centers.rows())
    throw ConfigError("samples and mode centers differ in dimension");
  if (centers.cols() == 0) return 0.0;
  const double r2 = std::pow(radius_multiplier * sigma, 2);
  int found = 0;
  for (Eigen::Index k = 0; k < centers.cols(); ++k) {
    const Eigen::VectorXd c = centers.col(k);
    for (Eigen::Index j = 0; j < samples.cols(); ++j) {
      if ((samples.col(j) - c).squaredNorm() <= r2) {
        ++found;
        break;
      }
    }
  }
  return static_cast<double>(found) / static_cast<double>(centers.cols());
}

int sign_patterns_found(const Points& samples) {
  std::set<std::uint64_t> seen;
  for (Eigen::Index j = 0; j < samples.cols(); ++j) {
    if (!samples.col(j).allFinite()) continue;
    std::uint64_t code = 0;
    for (Eigen::Index i = 0; i < samples.rows(); i += 2)
      code = (code << 1) | (samples(i, j) > 0.0 ? 1u : 0u);
    seen.insert(code);
  }
  return static_cast<int>(seen.size());
}

nlohmann::json EvalSettings::to_json() const {
  return {{"n_samples", n_samples},       {"n_test", n_test},
          {"mae_samples", mae_samples},   {"mae_reps", mae_reps},
          {"logz_samples", logz_samples}, {"logz_reps", logz_reps},
          {"quadratic_seed", quadratic_seed}, {"ais_ess", ais_ess}};
}

nlohmann::json EvalReport::to_json() const {
  return {{"target", target},
          {"ess_percent", number_or_null(ess_percent)},
          {"forward_kl", number_or_null(forward_kl)},
          {"forward_kl_finite", std::isfinite(forward_kl)},
          {"test_loglik", number_or_null(test_loglik)},
          {"mae_percent", optional_number(mae_percent)},
          {"mae_no_reweight_percent", optional_number(mae_no_reweight_percent)},
          {"mode_coverage", mode_coverage},
          {"modes_found", modes_found},
          {"modes_total", modes_total},
          {"logz_mae_percent", optional_number(logz_mae_percent)},
          {"ais_ess_percent", optional_number(ais_ess_percent)},
          {"dropped", dropped}};
}

std::string EvalReport::csv_header() {
  return "target,ess_percent,forward_kl,test_loglik,mae_percent,"
         "mae_no_reweight_percent,mode_coverage,modes_found,modes_total,"
         "logz_mae_percent,ais_ess_percent,dropped";
}

std::string EvalReport::csv_row() const {
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  std::ostringstream out;
  write_csv_row(out, {target, format_double(ess_percent), format_double(forward_kl),
                      format_double(test_loglik), opt(mae_percent),
                      opt(mae_no_reweight_percent), format_double(mode_coverage),
                      std::to_string(modes_found), std::to_string(modes_total),
                      opt(logz_mae_percent), opt(ais_ess_percent), std::to_string(dropped)});
  std::string s = out.str();
  s.pop_back();
  return s;
}

EvalReport evaluate_flow(const FlowModel& flow, TargetPtr target,
                         const EvalSettings& settings, Rng& rng) {
  if (!target || target->dim() != flow.dim())
    throw ConfigError("checkpoint dimension " + std::to_string(flow.dim()) +
                      " does not match the target");
  EvalReport rep;
  rep.target = target->name();

  FlowSample s = flow.sample(settings.n_samples, rng);
  const Eigen::VectorXd lw = target->log_prob(s.xs) - s.log_q;
  for (Eigen::Index i = 0; i < lw.size(); ++i)
    if (!std::isfinite(lw[i])) ++rep.dropped;
  // A flow with no finite weight at all reports NaN rather than failing.
  rep.ess_percent = rep.dropped == static_cast<std::size_t>(lw.size()) ? kNaN : ess_percent(lw);

  if (target->has_exact_sampler() && target->log_z()) {
    const Points test = target->sample(settings.n_test, rng);
    rep.forward_kl = forward_kl(flow, *target, test);
    const Eigen::VectorXd lq = flow.log_prob(test);
    rep.test_loglik = lq.allFinite() ? lq.mean() : -std::numeric_limits<double>::infinity();
  } else {
    rep.forward_kl = kNaN;
    rep.test_loglik = kNaN;
  }

  if (auto* gmm = dynamic_cast<const GaussianMixture*>(target.get())) {
    const GmmSpec& spec = gmm->spec();
    double sigma = 0.0;
    for (const auto& c : spec.covs) sigma = std::max(sigma, std::sqrt(c.diagonal().maxCoeff()));
    rep.mode_coverage = mode_coverage(s.xs, spec.means, sigma);
    rep.modes_total = spec.n_components();
    rep.modes_found = static_cast<int>(std::lround(rep.mode_coverage * rep.modes_total));
    const QuadraticCoeffs k = quadratic_coeffs(spec.dim(), settings.quadratic_seed);
    const double truth = quadratic_expectation(spec, k);
    auto f = [&k](const Points& x) { return quadratic_f(x, k); };
    const WeightedSampler fs = flow_sampler(flow, target);
    rep.mae_percent =
        expectation_mae(fs, f, truth, settings.mae_samples, settings.mae_reps, true, rng).mae_percent;
    rep.mae_no_reweight_percent =
        expectation_mae(fs, f, truth, settings.mae_samples, settings.mae_reps, false, rng).mae_percent;
  } else if (auto* mw = dynamic_cast<const ManyWell*>(target.get())) {
    rep.modes_total = 1 << mw->n_pairs();
    rep.modes_found = sign_patterns_found(s.xs);
    rep.mode_coverage = static_cast<double>(rep.modes_found) / rep.modes_total;
  }

  if (target->log_z() && !dynamic_cast<const GaussianMixture*>(target.get()))
    rep.logz_mae_percent = logz_mae(flow_sampler(flow, target), *target->log_z(),
                                    settings.logz_samples, settings.logz_reps, rng)
                               .mae_percent;

  if (settings.ais_ess) {
    FlowBootstrapPath path(flow, target, 1.0);
    AisSampler ais(AnnealingSchedule::linear(settings.ais_intermediate), settings.ais_kernel);
    ais.freeze();
    try {
      rep.ais_ess_percent = ess_percent(ais.run(path, settings.n_samples, rng).log_ws);
    } catch (const EmptyBatchError&) {
      rep.ais_ess_percent = kNaN;
    }
  }
  return rep;
}

}  // namespace fab
