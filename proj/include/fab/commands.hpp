#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "fab/config.hpp"

namespace fab {

struct CommandOptions {
  std::filesystem::path config;
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::filesystem::path> checkpoint;
  std::size_t n_samples = 1000;  // sample command only
};

// --out, then the config's output_dir, then $FAB_OUTPUT_ROOT/<experiment>,
// then ./runs/<experiment>.
std::filesystem::path resolve_output_dir(const RunConfig& config,
                                         const CommandOptions& options);

// Loads the config and applies command-line overrides.
RunConfig load_run_config(const CommandOptions& options);

// Each command writes only below its output directory and returns a process
// exit code. Errors propagate as exceptions.
int run_train(const CommandOptions& options);
int run_evaluate(const CommandOptions& options);
int run_analyze(const CommandOptions& options);
int run_sample(const CommandOptions& options);

// Resolved config plus seed and build information, as stored next to every
// artifact.
nlohmann::json provenance_json(const RunConfig& config);

}  // namespace fab
