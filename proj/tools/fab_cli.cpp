#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fab/commands.hpp"
#include "fab/errors.hpp"

namespace {

void add_common(CLI::App* cmd, fab::CommandOptions& o, std::string& config, bool config_required) {
  auto* opt = cmd->add_option("--config", config, "run config (JSON)");
  if (config_required) opt->required()->check(CLI::ExistingFile);
  cmd->add_option_function<std::string>("--out", [&o](const std::string& s) { o.out = s; },
                                        "output directory");
  cmd->add_option_function<std::uint64_t>("--seed", [&o](std::uint64_t s) { o.seed = s; },
                                          "overrides the config seed");
  cmd->add_option_function<int>("--threads", [&o](int t) { o.threads = t; },
                                "worker threads for analysis repetitions");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flow annealed importance sampling bootstrap"};
  app.require_subcommand(1);

  fab::CommandOptions o;
  std::string config;
  std::string checkpoint;

  auto* train = app.add_subcommand("train", "train a flow and evaluate it");
  add_common(train, o, config, true);
  train->add_option("--checkpoint", checkpoint, "initialise from this checkpoint")
      ->check(CLI::ExistingFile);

  auto* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint on the config target");
  add_common(evaluate, o, config, true);
  evaluate->add_option("--checkpoint", checkpoint, "flow checkpoint")
      ->required()
      ->check(CLI::ExistingFile);

  auto* analyze = app.add_subcommand("analyze", "gradient-estimator studies");
  add_common(analyze, o, config, true);

  auto* sample = app.add_subcommand("sample", "draw samples from a checkpoint");
  add_common(sample, o, config, false);
  sample->add_option("--checkpoint", checkpoint, "flow checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  sample->add_option("-n,--n-samples", o.n_samples, "number of samples")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);
  o.config = config;
  if (!checkpoint.empty()) o.checkpoint = checkpoint;

  try {
    if (*train) return fab::run_train(o);
    if (*evaluate) return fab::run_evaluate(o);
    if (*analyze) return fab::run_analyze(o);
    if (*sample) return fab::run_sample(o);
  } catch (const fab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const fab::TrainingAborted&) {
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
