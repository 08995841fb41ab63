#pragma once

// Experiment configuration: an INI-style file with one section per
// component. Every key is optional; defaults are the reference training
// setup (train batch 512, mini-batch 32, G = 8, 3x oversampling, lr 1e-6,
// temperature 1.0, length percentiles 0.3 / 0.65 / 0.95).

#include <cstddef>
#include <cstdint>
#include <string>

#include "lspo/batch_builder.hpp"
#include "lspo/filters.hpp"
#include "lspo/policy_optim.hpp"
#include "lspo/scoring.hpp"
#include "lspo/toy_lab.hpp"

namespace lspo {

struct PolicyConfig {
  std::size_t context_window = 2;
  double init_scale = 0.5;
  double temperature = 1.0;
  bool operator==(const PolicyConfig&) const = default;
};

struct ExperimentConfig {
  std::string name = "run";
  std::uint64_t seed = 0;
  std::size_t steps = 200;
  double wall_clock_seconds = 0.0;  // 0 disables the time budget
  std::size_t checkpoint_interval = 10;
  std::size_t eval_k = 32;
  bool log_timing = false;  // wall-clock fields break byte-identical logs
  bool log_groups = true;

  SurrogateLossConfig loss;
  OptimizerConfig optim;
  FilterSpec filter;
  SamplerConfig sampler;
  RewardConfig reward;
  ToyTaskConfig task;
  PolicyConfig policy;

  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

std::string render_config(const ExperimentConfig& cfg);
/// Throws std::invalid_argument on unknown sections/keys or bad values.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Applies a "section.key=value" override.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

std::string render_ranges(const std::vector<PercentRange>& ranges);
std::vector<PercentRange> parse_ranges(const std::string& text);

}  // namespace lspo
