#include "fab/commands.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <Eigen/Core>

#include "fab/checkpoint.hpp"
#include "fab/csv.hpp"
#include "fab/errors.hpp"

namespace fab {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

fs::path checkpoint_name(std::size_t iteration) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "iter_%08zu.fab", iteration);
  return buf;
}

const RunConfig& require(const RunConfig& c, bool ok, const std::string& what) {
  if (!ok) throw ConfigError("config has no " + what + " section");
  return c;
}

void write_report(const fs::path& dir, const RunConfig& config, const EvalReport& report) {
  nlohmann::json j = provenance_json(config);
  j["report"] = report.to_json();
  write_json(dir / "eval_report.json", j);
  auto csv = open_out(dir / "eval_row.csv");
  csv << "experiment," << EvalReport::csv_header() << '\n';
  csv << config.experiment << ',' << report.csv_row() << '\n';
}

void write_ais_header(std::ostream& out, int n_intermediate) {
  out << "iteration,flow_evals,log_mean_weight,dropped";
  for (int i = 0; i < n_intermediate; ++i) out << ",accept_" << i;
  for (int i = 0; i < n_intermediate; ++i) out << ",step_" << i;
  out << '\n';
}

void write_ais_row(std::ostream& out, const IterationMetrics& m) {
  out << m.iteration << ',' << m.flow_evals << ',' << format_double(m.log_mean_weight) << ','
      << m.dropped;
  for (double a : m.accept_rate) out << ',' << format_double(a);
  for (double s : m.step_size) out << ',' << format_double(s);
  out << '\n';
}

}  // namespace

fs::path resolve_output_dir(const RunConfig& config, const CommandOptions& options) {
  if (options.out) return *options.out;
  if (config.output_dir) return *config.output_dir;
  if (const char* root = std::getenv("FAB_OUTPUT_ROOT"); root && *root)
    return fs::path(root) / config.experiment;
  return fs::path("runs") / config.experiment;
}

RunConfig load_run_config(const CommandOptions& options) {
  RunConfig c = RunConfig::load(options.config);
  if (options.seed) c.seed = *options.seed;
  if (options.threads) {
    if (*options.threads < 1) throw ConfigError("--threads must be >= 1");
    c.threads = *options.threads;
  }
  if (c.analysis) {
    c.analysis->snr.seed = c.analysis->scaling.seed = c.seed;
    c.analysis->snr.threads = c.analysis->scaling.threads = c.threads;
  }
  return c;
}

nlohmann::json provenance_json(const RunConfig& config) {
  return {{"config", config.to_json()},
          {"seed", config.seed},
          {"build",
           {{"version", "0.1.0"},
            {"checkpoint_format", kCheckpointFormatVersion},
            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                          std::to_string(EIGEN_MAJOR_VERSION) + "." +
                          std::to_string(EIGEN_MINOR_VERSION)},
            {"compiler", __VERSION__}}}};
}

int run_train(const CommandOptions& options) {
  const RunConfig config = load_run_config(options);
  require(config, config.trainer.has_value(), "trainer");
  const TrainConfig& tc = *config.trainer;
  const fs::path dir = resolve_output_dir(config, options);
  fs::create_directories(dir / "checkpoints");
  write_json(dir / "resolved_config.json", provenance_json(config));

  const TargetPtr target = config.target->build();
  FlowModel flow = options.checkpoint ? load_checkpoint(*options.checkpoint)
                                      : FlowModel(*config.flow, config.flow_seed);
  if (flow.architecture() != *config.flow)
    throw ConfigError("checkpoint architecture does not match the config flow section");

  const bool is_fab = tc.method == TrainMethod::fab;
  const int n_int = is_fab ? tc.fab.n_intermediate : 0;
  auto metrics = open_out(dir / "metrics.csv");
  write_metrics_header(metrics, n_int);
  std::ofstream ais;
  if (is_fab) {
    ais = open_out(dir / "ais_diagnostics.csv");
    write_ais_header(ais, n_int);
  }

  TrainHooks hooks;
  hooks.on_iteration = [&](const IterationMetrics& m) {
    write_metrics_row(metrics, m, n_int);
    metrics.flush();
    if (is_fab) {
      write_ais_row(ais, m);
      ais.flush();
    }
  };
  hooks.on_checkpoint = [&](std::size_t it, const FlowModel& f) {
    save_checkpoint(dir / "checkpoints" / checkpoint_name(it), f);
  };

  Rng rng(split_seed(config.seed, 0));
  TrainResult result = [&] {
    try {
      return train(tc, std::move(flow), target, rng, hooks);
    } catch (const TrainingAborted& e) {
      std::cerr << "training aborted: " << e.what() << "\npartial artifacts kept in "
                << dir.string() << '\n';
      throw;
    }
  }();
  save_checkpoint(dir / "checkpoints" / "final.fab", result.flow);

  EvalSettings eval = config.evaluation;
  if (is_fab && eval.ais_ess) {
    eval.ais_intermediate = tc.fab.n_intermediate;
    eval.ais_kernel = result.kernel;
    if (auto* h = std::get_if<HmcConfig>(&eval.ais_kernel)) h->adapt = false;
  }
  Rng eval_rng(split_seed(config.seed, 1));
  const EvalReport report = evaluate_flow(result.flow, target, eval, eval_rng);
  write_report(dir, config, report);
  std::cout << "trained " << result.iterations << " iterations, " << result.flow_evals
            << " flow evaluations; ess " << format_double(report.ess_percent) << "%, forward KL "
            << format_double(report.forward_kl) << "\nartifacts in " << dir.string() << '\n';
  return 0;
}

int run_evaluate(const CommandOptions& options) {
  const RunConfig config = load_run_config(options);
  require(config, config.target.has_value(), "target");
  if (!options.checkpoint) throw ConfigError("evaluate needs --checkpoint");
  const FlowModel flow = load_checkpoint(*options.checkpoint);
  if (flow.dim() != config.target->dim())
    throw ConfigError("checkpoint dim does not match the target");
  const fs::path dir = resolve_output_dir(config, options);
  fs::create_directories(dir);
  Rng rng(split_seed(config.seed, 1));
  const EvalReport report = evaluate_flow(flow, config.target->build(), config.evaluation, rng);
  write_report(dir, config, report);
  std::cout << report.to_json().dump(2) << '\n';
  return 0;
}

int run_analyze(const CommandOptions& options) {
  const RunConfig config = load_run_config(options);
  require(config, config.analysis.has_value(), "analysis");
  const AnalysisConfig& a = *config.analysis;
  const fs::path dir = resolve_output_dir(config, options);
  fs::create_directories(dir);
  write_json(dir / "resolved_config.json", provenance_json(config));
  if (a.kind == "snr") {
    const GaussianPair pair = gaussian_pair_1d();
    std::vector<SnrSweepResult> results;
    for (const auto& name : a.estimators)
      results.push_back(snr_sweep(pair, estimator_from_string(name), a.snr));
    auto out = open_out(dir / "snr.csv");
    write_snr_csv(out, results);
    write_snr_csv(std::cout, results);
  } else {
    const auto rows = scaling_study(a.scaling);
    auto out = open_out(dir / "scaling.csv");
    write_scaling_csv(out, rows);
    write_scaling_csv(std::cout, rows);
  }
  return 0;
}

int run_sample(const CommandOptions& options) {
  if (!options.checkpoint) throw ConfigError("sample needs --checkpoint");
  const FlowModel flow = load_checkpoint(*options.checkpoint);
  RunConfig config;
  if (!options.config.empty()) config = load_run_config(options);
  if (options.seed) config.seed = *options.seed;
  const fs::path dir = resolve_output_dir(config, options);
  fs::create_directories(dir);
  Rng rng(split_seed(config.seed, 2));
  const FlowSample s = flow.sample(options.n_samples, rng);
  auto out = open_out(dir / "samples.csv");
  for (int d = 0; d < flow.dim(); ++d) out << 'x' << d << ',';
  out << "log_q\n";
  for (Eigen::Index i = 0; i < s.xs.cols(); ++i) {
    for (int d = 0; d < flow.dim(); ++d) out << format_double(s.xs(d, i)) << ',';
    out << format_double(s.log_q[i]) << '\n';
  }
  return 0;
}

}  // namespace fab
