#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "fab/analysis.hpp"
#include "fab/eval.hpp"
#include "fab/flow.hpp"
#include "fab/targets.hpp"
#include "fab/trainer.hpp"

namespace fab {

struct TargetConfig {
  std::string kind = "gmm40";  // gmm40 | manywell | gaussian
  std::uint64_t seed = 0;
  int n_pairs = 4;
  std::vector<double> mean;
  std::vector<double> stddev;

  int dim() const;
  TargetPtr build() const;
  nlohmann::json to_json() const;
};

struct AnalysisConfig {
  std::string kind = "snr";  // snr | scaling
  std::vector<std::string> estimators{"is_q", "is_p", "ais_p", "ais_p2q"};
  SnrSweepSettings snr;
  ScalingSettings scaling;

  nlohmann::json to_json() const;
};

/// Declarative description of one run. Parsing validates everything and
/// rejects unknown keys before any compute; errors name the offending line.
struct RunConfig {
  std::string experiment = "run";
  std::uint64_t seed = 0;
  int threads = 1;
  std::optional<std::string> output_dir;
  std::optional<TargetConfig> target;
  std::optional<FlowArchitecture> flow;
  std::uint64_t flow_seed = 1;
  std::optional<TrainConfig> trainer;
  EvalSettings evaluation;
  std::optional<AnalysisConfig> analysis;

  static RunConfig parse(const std::string& text, const std::string& source = "config");
  static RunConfig load(const std::filesystem::path& path);

  // Every field with defaults filled in; parse(to_json().dump()) is
  // equivalent to this config.
  nlohmann::json to_json() const;
};

nlohmann::json kernel_to_json(const KernelConfig& k);

}  // namespace fab
