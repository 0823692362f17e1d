#include "fab/trainer.hpp"

#include <cmath>
#include <limits>
#include <ostream>

#include "fab/buffer.hpp"
#include "fab/csv.hpp"
#include "fab/errors.hpp"
#include "fab/eval.hpp"
#include "fab/losses.hpp"

namespace fab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

class StreakGuard {
 public:
  explicit StreakGuard(int limit) : limit_(limit) {}

  void ok() { streak_ = 0; }
  void fail(std::size_t iteration, const std::string& why) {
    ++total_;
    if (++streak_ > limit_)
      throw TrainingAborted("training aborted at iteration " + std::to_string(iteration) +
                            " after " + std::to_string(streak_) +
                            " consecutive non-finite updates (last: " + why + ")");
  }
  std::size_t total() const { return total_; }

 private:
  int limit_;
  int streak_ = 0;
  std::size_t total_ = 0;
};

bool budget_left(const TrainConfig& c, std::uint64_t evals, std::size_t it) {
  if (it >= c.max_iterations) return false;
  return c.max_flow_evals == 0 || evals < c.max_flow_evals;
}

void fill_ais_metrics(const AisResult& r, IterationMetrics* m) {
  m->log_mean_weight = r.diagnostics.log_mean_weight;
  m->ess_batch = ess_percent(r.log_ws);
  m->dropped += r.diagnostics.dropped;
  m->accept_rate = r.diagnostics.accept_rate;
  m->step_size = r.diagnostics.step_size;
}

}  // namespace

std::string to_string(TrainMethod m) {
  switch (m) {
    case TrainMethod::fab: return "fab";
    case TrainMethod::reverse_kl: return "reverse_kl";
    case TrainMethod::d2_over_q: return "d2_over_q";
    case TrainMethod::max_likelihood: return "max_likelihood";
  }
  return "unknown";
}

TrainMethod train_method_from_string(const std::string& s) {
  if (s == "fab") return TrainMethod::fab;
  if (s == "reverse_kl") return TrainMethod::reverse_kl;
  if (s == "d2_over_q") return TrainMethod::d2_over_q;
  if (s == "max_likelihood") return TrainMethod::max_likelihood;
  throw ConfigError("unknown training method '" + s + "'");
}

void FabLossConfig::validate() const {
  if (alpha == 0.0 || !std::isfinite(alpha))
    throw ConfigError("alpha must be finite and non-zero");
  if (n_intermediate < 0) throw ConfigError("n_intermediate must be >= 0");
  if (inner_updates < 1) throw ConfigError("inner_updates must be >= 1");
  if (batch_ais == 0 || batch_buffer == 0) throw ConfigError("batch sizes must be positive");
  if (use_buffer) {
    if (max_buffer == 0 || min_buffer > max_buffer)
      throw ConfigError("buffer needs min_length <= max_length");
    if (batch_buffer > std::max(min_buffer, batch_ais))
      throw ConfigError("buffer batch exceeds what the buffer can hold when first sampled");
  }
  if (auto* h = std::get_if<HmcConfig>(&kernel)) h->validate(n_intermediate);
  if (auto* m = std::get_if<MetropolisConfig>(&kernel))
    if (!(m->sigma > 0.0)) throw ConfigError("metropolis sigma must be positive");
}

void TrainConfig::validate() const {
  if (method == TrainMethod::fab) fab.validate();
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (max_nonfinite_streak < 0) throw ConfigError("max_nonfinite_streak must be >= 0");
}

void write_metrics_header(std::ostream& out, int n_intermediate) {
  std::vector<std::string> h{"iteration", "flow_evals", "loss", "log_mean_weight",
                             "ess_batch", "dropped", "skipped_updates", "grad_norm",
                             "buffer_size"};
  for (int i = 0; i < n_intermediate; ++i) h.push_back("accept_" + std::to_string(i));
  for (int i = 0; i < n_intermediate; ++i) h.push_back("step_" + std::to_string(i));
  write_csv_row(out, h);
}

void write_metrics_row(std::ostream& out, const IterationMetrics& m,
                       int n_intermediate) {
  std::vector<std::string> r{std::to_string(m.iteration), std::to_string(m.flow_evals),
                             format_double(m.loss), format_double(m.log_mean_weight),
                             format_double(m.ess_batch), std::to_string(m.dropped),
                             std::to_string(m.skipped_updates), format_double(m.grad_norm),
                             std::to_string(m.buffer_size)};
  for (int i = 0; i < n_intermediate; ++i)
    r.push_back(format_double(i < static_cast<int>(m.accept_rate.size()) ? m.accept_rate[i] : kNaN));
  for (int i = 0; i < n_intermediate; ++i)
    r.push_back(format_double(i < static_cast<int>(m.step_size.size()) ? m.step_size[i] : kNaN));
  write_csv_row(out, r);
}

TrainResult train(const TrainConfig& config, FlowModel flow, TargetPtr target,
                  Rng& rng, const TrainHooks& hooks) {
  if (config.method == TrainMethod::fab)
    return train_fab(config, std::move(flow), std::move(target), rng, hooks);
  return train_baseline(config, std::move(flow), std::move(target), rng, hooks);
}

TrainResult train_fab(const TrainConfig& config, FlowModel flow, TargetPtr target,
                      Rng& rng, const TrainHooks& hooks) {
  config.validate();
  const FabLossConfig& fc = config.fab;
  if (!target || target->dim() != flow.dim())
    throw ConfigError("flow and target differ in dimension");

  AisSampler ais(AnnealingSchedule::linear(fc.n_intermediate), fc.kernel);
  Adam adam(config.optimizer, flow.num_params());
  ReplayBuffer buffer(flow.dim(), fc.min_buffer, fc.max_buffer);
  StreakGuard guard(config.max_nonfinite_streak);
  std::uint64_t evals = 0;
  std::size_t dropped_total = 0;

  auto ais_pass = [&](IterationMetrics* m) {
    FlowBootstrapPath path(flow, target, fc.alpha);
    try {
      AisResult r = ais.run(path, fc.batch_ais, rng);
      evals += path.flow_evals();
      return std::optional<AisResult>(std::move(r));
    } catch (const EmptyBatchError&) {
      evals += path.flow_evals();
      if (m) m->dropped += fc.batch_ais;
      dropped_total += fc.batch_ais;
      return std::optional<AisResult>();
    }
  };

  if (fc.use_buffer) {
    std::size_t attempts = 0;
    while (!buffer.ready()) {
      std::optional<AisResult> r = ais_pass(nullptr);
      if (r) buffer.insert(r->xs, r->log_ws, r->log_init);
      if (++attempts > 10 * (fc.min_buffer / fc.batch_ais + 1))
        throw TrainingAborted("could not fill the replay buffer with finite samples");
    }
  }

  std::size_t it = 0;
  for (; budget_left(config, evals, it); ++it) {
    IterationMetrics m;
    m.iteration = it;
    std::optional<AisResult> r = ais_pass(&m);
    if (!r) {
      guard.fail(it, "AIS produced no finite weights");
      m.skipped_updates = 1;
    } else {
      fill_ais_metrics(*r, &m);
      dropped_total += r->diagnostics.dropped;
    }

    if (fc.use_buffer) {
      if (r) buffer.insert(r->xs, r->log_ws, r->log_init);
      double loss_sum = 0.0;
      int loss_count = 0;
      for (int l = 0; l < fc.inner_updates; ++l) {
        BufferDraw d = buffer.sample(fc.batch_buffer, rng);
        BufferGradient g = fab_buffer_gradient(flow, d, fc.alpha,
                                           static_cast<double>(fc.batch_buffer),
                                           config.optimizer.clip_norm);
        evals += fc.batch_buffer;
        m.dropped += g.dropped;
        if (std::isnan(g.loss) || !g.grad.allFinite()) {
          ++m.skipped_updates;
          guard.fail(it, "non-finite buffer loss");
          continue;
        }
        adam.step(flow.mutable_params(), std::move(g.grad));
        m.grad_norm = std::exp(g.log_norm);
        buffer.commit(d);
        guard.ok();
        loss_sum += g.loss;
        ++loss_count;
      }
      m.loss = loss_count ? loss_sum / loss_count : kNaN;
      m.buffer_size = buffer.size();
    } else if (r) {
      try {
        LossGradient lg = fc.alpha == 2.0
                              ? fab_surrogate_gradient(flow, r->xs, r->log_ws)
                              : generic_alpha_gradient(flow, r->xs, r->log_ws, fc.alpha);
        evals += static_cast<std::uint64_t>(r->xs.cols());
        m.dropped += lg.dropped;
        if (!lg.grad.allFinite()) throw EmptyBatchError("non-finite gradient");
        m.loss = lg.loss;
        m.grad_norm = adam.step(flow.mutable_params(), std::move(lg.grad));
        guard.ok();
      } catch (const EmptyBatchError& e) {
        ++m.skipped_updates;
        m.loss = kNaN;
        guard.fail(it, e.what());
      }
    }
    m.flow_evals = evals;
    if (hooks.on_iteration) hooks.on_iteration(m);
    if (hooks.on_checkpoint && config.checkpoint_every &&
        (it + 1) % config.checkpoint_every == 0)
      hooks.on_checkpoint(it + 1, flow);
  }
  ais.freeze();
  return {std::move(flow), evals, it, guard.total(), dropped_total, ais.kernel()};
}

TrainResult train_baseline(const TrainConfig& config, FlowModel flow,
                           TargetPtr target, Rng& rng, const TrainHooks& hooks) {
  config.validate();
  if (config.method == TrainMethod::fab)
    throw ConfigError("train_baseline called with the fab method");
  if (!target || target->dim() != flow.dim())
    throw ConfigError("flow and target differ in dimension");
  if (config.method == TrainMethod::max_likelihood && !target->has_exact_sampler())
    throw ConfigError("maximum likelihood needs a target with an exact sampler");

  Adam adam(config.optimizer, flow.num_params());
  StreakGuard guard(config.max_nonfinite_streak);
  std::uint64_t evals = 0;
  std::size_t dropped_total = 0;
  std::size_t it = 0;
  for (; budget_left(config, evals, it); ++it) {
    IterationMetrics m;
    m.iteration = it;
    m.log_mean_weight = kNaN;
    m.ess_batch = kNaN;
    evals += config.batch_size;
    try {
      LossGradient lg;
      switch (config.method) {
        case TrainMethod::reverse_kl:
          lg = reverse_kl_gradient(flow, *target, config.batch_size, rng);
          break;
        case TrainMethod::d2_over_q:
          lg = d2_over_q_gradient(flow, *target, config.batch_size, rng);
          break;
        default:
          lg = max_likelihood_gradient(flow, *target, config.batch_size, rng);
          break;
      }
      m.dropped = lg.dropped;
      dropped_total += lg.dropped;
      if (!std::isfinite(lg.loss) || !lg.grad.allFinite())
        throw EmptyBatchError("non-finite loss or gradient");
      m.loss = lg.loss;
      m.grad_norm = adam.step(flow.mutable_params(), std::move(lg.grad));
      guard.ok();
    } catch (const EmptyBatchError& e) {
      m.skipped_updates = 1;
      m.loss = kNaN;
      guard.fail(it, e.what());
    } catch (const NumericError& e) {
      m.skipped_updates = 1;
      m.loss = kNaN;
      guard.fail(it, e.what());
    }
    m.flow_evals = evals;
    if (hooks.on_iteration) hooks.on_iteration(m);
    if (hooks.on_checkpoint && config.checkpoint_every &&
        (it + 1) % config.checkpoint_every == 0)
      hooks.on_checkpoint(it + 1, flow);
  }
  return {std::move(flow), evals, it, guard.total(), dropped_total, IdentityKernel{}};
}

}  // namespace fab
