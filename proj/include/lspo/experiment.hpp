#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lspo/config.hpp"

namespace lspo {

struct StepRow {
  std::size_t step = 0;
  double wall_clock = 0.0;  // seconds since run start
  double objective = 0.0;
  double mean_reward = 0.0;        // every rollout sampled during the step
  double batch_mean_reward = 0.0;  // rollouts in the selected training batch
  double mean_length = 0.0;
  double batch_mean_length = 0.0;
  std::size_t rounds_used = 0;
  std::size_t prompts_sampled = 0;
  std::size_t rollouts_generated = 0;
  double accuracy_survival = 0.0;
  double length_survival = 0.0;
  double overall_survival = 0.0;
  /// Length-filter thresholds of the step's last round.
  std::vector<std::pair<std::string, double>> thresholds;
  double clip_fraction = 0.0;
  double mean_ratio = 0.0;
  double grad_norm = 0.0;
  std::size_t update_steps = 0;
  std::optional<double> eval_avg_at_k;

  /// Equality ignoring wall_clock.
  bool same_metrics(const StepRow& other) const;
};

struct RunRecord {
  ExperimentConfig config;
  std::vector<StepRow> rows;
  bool starved = false;
  std::string error;
  double final_avg_at_k = 0.0;
  std::size_t checkpoints_used = 0;
  /// Fewer than two checkpoints were available for the final score.
  bool checkpoint_fallback = false;

  const std::string& name() const { return config.name; }
  std::size_t training_steps() const;
};

/// Mean avg@k over the evaluation prompts, k samples per prompt.
double evaluate_avg_at_k(const TinyPolicy& policy, const ToyTask& task, std::size_t k, std::uint64_t seed,
                         std::size_t step, const RewardConfig& reward);

/// Runs fill_batch + update_step until the step or wall-clock budget is
/// spent, evaluating every checkpoint_interval steps. Starvation ends the
/// run early with `starved` set; it does not throw. When `log` is given,
/// JSONL records are streamed to it.
RunRecord run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr);

/// The filter variants of the length/accuracy ablation grid.
std::vector<std::pair<std::string, FilterSpec>> ablation_variants();

/// Runs one experiment per variant with the base config's seeds. Logs go to
/// `out_dir/<name>.jsonl` when out_dir is non-empty.
std::vector<RunRecord> run_grid(const ExperimentConfig& base,
                                const std::vector<std::pair<std::string, FilterSpec>>& variants,
                                const std::string& out_dir = {}, std::size_t jobs = 1);

struct ComparisonRow {
  std::string name;
  std::string algorithm;
  std::string filter;
  double final_avg_at_k = 0.0;
  std::size_t checkpoints_used = 0;
  bool checkpoint_fallback = false;
  double rollouts_per_step = 0.0;
  double mean_length = 0.0;
  double rounds_per_step = 0.0;
  bool starved = false;
  std::size_t rank = 0;  // 1 = best; ties share a rank
};

struct Comparison {
  std::size_t eval_k = 0;
  std::vector<ComparisonRow> rows;  // input order
  bool tie_at_top = false;
};

/// Throws std::invalid_argument for fewer than two records or mismatched
/// eval_k.
Comparison compare_runs(const std::vector<RunRecord>& records);
std::string render_comparison(const Comparison& cmp);
void write_comparison_csv(const Comparison& cmp, std::ostream& out);

void write_steps_csv(const RunRecord& record, std::ostream& out);

std::string describe_filter(const FilterSpec& spec);

}  // namespace lspo
