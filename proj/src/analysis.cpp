#include "fab/analysis.hpp"

#include <cmath>
#include <ostream>
#include <thread>

#include "fab/ais.hpp"
#include "fab/csv.hpp"
#include "fab/errors.hpp"

namespace fab {

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn fn) {
  const std::size_t workers =
      std::max<std::size_t>(1, std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads))));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct MeanStd {
  double mean;
  double std;
};

MeanStd mean_std(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size() - 1))};
}

AisResult ais_to(const GaussianPair& pair, TargetPtr target, std::size_t n,
                 int n_intermediate, double step, int n_leapfrog, Rng& rng) {
  FixedPath path(pair.q0, std::move(target));
  AisSampler ais(AnnealingSchedule::linear(n_intermediate),
                 HmcConfig::fixed(n_intermediate, step, n_leapfrog));
  return ais.run(path, n, rng);
}

}  // namespace

std::string to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::is_q: return "is_q";
    case EstimatorKind::is_p: return "is_p";
    case EstimatorKind::ais_p: return "ais_p";
    case EstimatorKind::ais_p2q: return "ais_p2q";
  }
  return "unknown";
}

EstimatorKind estimator_from_string(const std::string& s) {
  if (s == "is_q") return EstimatorKind::is_q;
  if (s == "is_p") return EstimatorKind::is_p;
  if (s == "ais_p") return EstimatorKind::ais_p;
  if (s == "ais_p2q") return EstimatorKind::ais_p2q;
  throw ConfigError("unknown estimator '" + s + "'");
}

double grad_estimate(const GaussianPair& pair, EstimatorKind kind,
                     std::size_t n_samples, const EstimatorSettings& settings,
                     Rng& rng) {
  if (n_samples == 0) throw ConfigError("estimator needs at least one sample");
  const double mu_q = pair.q0->mean()[0];
  Points x;
  Eigen::VectorXd coeff;  // per-sample weight multiplying -(x_0 - mu_q)
  switch (kind) {
    case EstimatorKind::is_q: {
      x = pair.q0->sample(n_samples, rng);
      coeff = (2.0 * (pair.p->log_prob(x) - pair.q0->log_prob(x))).array().exp();
      break;
    }
    case EstimatorKind::is_p: {
      x = pair.p->sample(n_samples, rng);
      coeff = (pair.p->log_prob(x) - pair.q0->log_prob(x)).array().exp();
      break;
    }
    case EstimatorKind::ais_p: {
      AisResult r = ais_to(pair, pair.p, n_samples, settings.n_intermediate,
                           settings.hmc_step, settings.n_leapfrog, rng);
      x = std::move(r.xs);
      coeff = (r.log_ws + pair.p->log_prob(x) - pair.q0->log_prob(x)).array().exp();
      break;
    }
    case EstimatorKind::ais_p2q: {
      auto target = std::make_shared<GeometricTarget>(pair.p, pair.q0, 2.0);
      AisResult r = ais_to(pair, target, n_samples, settings.n_intermediate,
                           settings.hmc_step, settings.n_leapfrog, rng);
      x = std::move(r.xs);
      coeff = r.log_ws.array().exp();
      break;
    }
  }
  const Eigen::VectorXd centred = x.row(0).transpose().array() - mu_q;
  // Divide by the requested count so dropped chains bias towards zero
  // rather than being silently renormalised.
  return -coeff.dot(centred) / static_cast<double>(n_samples);
}

SnrSweepResult snr_sweep(const GaussianPair& pair, EstimatorKind kind,
                         const SnrSweepSettings& s) {
  if (s.axis != "n_samples" && s.axis != "n_dists")
    throw ConfigError("snr axis must be n_samples or n_dists");
  if (s.reps < 2) throw ConfigError("snr sweep needs at least two repetitions");
  SnrSweepResult out{kind, s.axis, {}};
  for (std::size_t g = 0; g < s.grid.size(); ++g) {
    std::size_t n = s.n_samples;
    EstimatorSettings es = s.estimator;
    if (s.axis == "n_samples")
      n = static_cast<std::size_t>(s.grid[g]);
    else
      es.n_intermediate = static_cast<int>(s.grid[g]);
    std::vector<double> est(s.reps);
    parallel_for(s.reps, s.threads, [&](std::size_t r) {
      Rng rng(split_seed(s.seed, g * 1000003ull + r));
      est[r] = grad_estimate(pair, kind, n, es, rng);
    });
    SnrPoint p;
    p.axis_value = s.grid[g];
    std::vector<double> finite;
    for (double v : est) {
      if (std::isfinite(v))
        finite.push_back(v);
      else
        ++p.nonfinite;
    }
    if (finite.size() < 2) throw Error("too few finite estimates for an SNR");
    const MeanStd ms = mean_std(finite);
    if (!(ms.std > 0.0)) throw Error("estimator has zero spread; SNR undefined");
    p.mean = ms.mean;
    p.std = ms.std;
    p.snr = std::abs(ms.mean) / ms.std;
    p.reps = finite.size();
    out.points.push_back(p);
  }
  return out;
}

void write_snr_csv(std::ostream& out, const std::vector<SnrSweepResult>& results) {
  write_csv_row(out, {"estimator", "axis", "axis_value", "snr", "mean", "std", "reps", "nonfinite"});
  for (const auto& r : results)
    for (const auto& p : r.points)
      write_csv_row(out, {to_string(r.kind), r.axis, format_double(p.axis_value),
                          format_double(p.snr), format_double(p.mean), format_double(p.std),
                          std::to_string(p.reps), std::to_string(p.nonfinite)});
}

std::vector<ScalingRow> scaling_study(const ScalingSettings& s) {
  if (s.reps < 2 || s.n_samples < 2) throw ConfigError("scaling study needs reps, n >= 2");
  std::vector<ScalingRow> rows;
  for (std::size_t di = 0; di < s.dims.size(); ++di) {
    const int d = s.dims[di];
    if (d < 1) throw ConfigError("dimensions must be positive");
    const GaussianPair pair = factorized_gaussians(d);
    auto p2q = std::make_shared<GeometricTarget>(pair.p, pair.q0, 2.0);
    const double mu_q = pair.q0->mean()[0];
    std::vector<double> g_fab(s.reps), g_isp(s.reps);
    std::vector<Eigen::VectorXd> lw_fab(s.reps), lw_isp(s.reps);
    parallel_for(s.reps, s.threads, [&](std::size_t r) {
      Rng rng(split_seed(s.seed, di * 1000003ull + r));
      AisResult a = ais_to(pair, p2q, s.n_samples, d, s.hmc_step, s.n_leapfrog, rng);
      const Eigen::VectorXd ca = a.xs.row(0).transpose().array() - mu_q;
      g_fab[r] = -a.log_ws.array().exp().matrix().dot(ca) / static_cast<double>(s.n_samples);
      lw_fab[r] = a.log_ws;
      const Points x = pair.p->sample(s.n_samples, rng);
      const Eigen::VectorXd lw = pair.p->log_prob(x) - pair.q0->log_prob(x);
      const Eigen::VectorXd cp = x.row(0).transpose().array() - mu_q;
      g_isp[r] = -lw.array().exp().matrix().dot(cp) / static_cast<double>(s.n_samples);
      lw_isp[r] = lw;
    });
    auto pooled_var = [](const std::vector<Eigen::VectorXd>& v) {
      std::vector<double> all;
      for (const auto& e : v) all.insert(all.end(), e.data(), e.data() + e.size());
      const MeanStd ms = mean_std(all);
      return ms.std * ms.std;
    };
    ScalingRow row;
    row.dim = d;
    row.reps = s.reps;
    row.var_logw_fab = pooled_var(lw_fab);
    row.var_logw_isp = pooled_var(lw_isp);
    const MeanStd f = mean_std(g_fab), p = mean_std(g_isp);
    row.snr_fab = std::abs(f.mean) / f.std;
    row.snr_isp = std::abs(p.mean) / p.std;
    rows.push_back(row);
  }
  return rows;
}

void write_scaling_csv(std::ostream& out, const std::vector<ScalingRow>& rows) {
  write_csv_row(out, {"dim", "var_logw_fab", "var_logw_isp", "snr_fab", "snr_isp", "reps"});
  for (const auto& r : rows)
    write_csv_row(out, {std::to_string(r.dim), format_double(r.var_logw_fab),
                        format_double(r.var_logw_isp), format_double(r.snr_fab),
                        format_double(r.snr_isp), std::to_string(r.reps)});
}

}  // namespace fab
