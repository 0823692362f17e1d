#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "fab/ais.hpp"
#include "fab/flow.hpp"
#include "fab/optimizer.hpp"
#include "fab/targets.hpp"

namespace fab {

enum class TrainMethod { fab, reverse_kl, d2_over_q, max_likelihood };

std::string to_string(TrainMethod m);
// Throws ConfigError on an unknown name.
TrainMethod train_method_from_string(const std::string& s);

struct FabLossConfig {
  double alpha = 2.0;
  bool use_buffer = true;
  int n_intermediate = 1;
  int inner_updates = 4;           // L
  std::size_t batch_ais = 128;     // M
  std::size_t batch_buffer = 128;  // N
  std::size_t min_buffer = 1280;
  std::size_t max_buffer = 12800;
  KernelConfig kernel = MetropolisConfig{};

  void validate() const;
};

struct TrainConfig {
  TrainMethod method = TrainMethod::fab;
  FabLossConfig fab;
  AdamConfig optimizer;
  std::size_t batch_size = 128;     // per step, baselines only
  std::size_t max_iterations = 1000;
  std::uint64_t max_flow_evals = 0;  // 0 means no evaluation budget
  int max_nonfinite_streak = 50;
  std::size_t checkpoint_every = 0;

  void validate() const;
};

struct IterationMetrics {
  std::size_t iteration = 0;
  std::uint64_t flow_evals = 0;
  double loss = 0.0;
  double log_mean_weight = 0.0;  // NaN when the method has no weights
  double ess_batch = 0.0;        // percent, NaN when not applicable
  std::size_t dropped = 0;       // samples dropped as non-finite
  std::size_t skipped_updates = 0;
  double grad_norm = 0.0;
  std::size_t buffer_size = 0;
  std::vector<double> accept_rate;
  std::vector<double> step_size;
};

void write_metrics_header(std::ostream& out, int n_intermediate);
void write_metrics_row(std::ostream& out, const IterationMetrics& m,
                       int n_intermediate);

struct TrainHooks {
  std::function<void(const IterationMetrics&)> on_iteration;
  std::function<void(std::size_t, const FlowModel&)> on_checkpoint;
};

struct TrainResult {
  FlowModel flow;
  std::uint64_t flow_evals = 0;
  std::size_t iterations = 0;
  std::size_t skipped_updates = 0;
  std::size_t dropped_samples = 0;
  KernelConfig kernel;  // AIS kernel after adaptation, for frozen evaluation
};

// Dispatches on config.method. Throws TrainingAborted after more than
// max_nonfinite_streak consecutive skipped updates.
TrainResult train(const TrainConfig& config, FlowModel flow, TargetPtr target,
                  Rng& rng, const TrainHooks& hooks = {});

TrainResult train_fab(const TrainConfig& config, FlowModel flow, TargetPtr target,
                      Rng& rng, const TrainHooks& hooks = {});
TrainResult train_baseline(const TrainConfig& config, FlowModel flow,
                           TargetPtr target, Rng& rng, const TrainHooks& hooks = {});

}  // namespace fab
