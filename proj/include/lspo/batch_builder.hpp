#pragma once

/**
 * Dynamic batch filling: sample B_r prompts per round, roll each out into a
 * group of G responses, drop zero-variance groups, apply the length filter
 * on this round's survivors, and pool what remains until at least B_t
 * groups exist. The final batch is exactly B_t groups; surplus is dropped.
 */

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lspo/core_model.hpp"
#include "lspo/filters.hpp"
#include "lspo/rng.hpp"

namespace lspo {

enum class SelectionMode { random_uniform, first_fit };

std::string_view to_string(SelectionMode mode);
SelectionMode parse_selection_mode(std::string_view s);

struct SamplerConfig {
  /// Prompts per round; 0 derives oversample_factor * train_batch.
  std::size_t rollout_batch = 0;
  std::size_t train_batch = 512;
  std::size_t group_size = 8;
  std::size_t oversample_factor = 3;
  std::size_t max_rounds = 20;
  SelectionMode selection = SelectionMode::random_uniform;
  std::uint64_t rng_seed = 0;
  /// Threads used for rollouts within a round.
  std::size_t workers = 1;

  std::size_t effective_rollout_batch() const;
  void validate() const;
  bool operator==(const SamplerConfig&) const = default;
};

class PromptSource {
 public:
  virtual ~PromptSource() = default;
  /// Returns `count` prompts, distinct within the call.
  virtual std::vector<Prompt> draw(std::size_t count, Rng& rng) = 0;
};

/// Uniform draws without replacement within a round, with replacement
/// across rounds.
class DatasetPromptSource final : public PromptSource {
 public:
  explicit DatasetPromptSource(std::vector<Prompt> dataset);
  std::vector<Prompt> draw(std::size_t count, Rng& rng) override;
  const std::vector<Prompt>& dataset() const { return dataset_; }

 private:
  std::vector<Prompt> dataset_;
};

/// Walks the dataset in order, wrapping around. Used by scripted tests.
class SequentialPromptSource final : public PromptSource {
 public:
  explicit SequentialPromptSource(std::vector<Prompt> dataset);
  std::vector<Prompt> draw(std::size_t count, Rng& rng) override;

 private:
  std::vector<Prompt> dataset_;
  std::size_t cursor_ = 0;
};

struct RolloutRequest {
  std::size_t step = 0;
  std::size_t round = 0;
};

/// Must be safe to call concurrently when SamplerConfig::workers > 1.
using RolloutFn = std::function<RolloutGroup(const Prompt&, const RolloutRequest&)>;

struct SurvivorSummary {
  PromptId prompt_id = 0;
  double avg_length = 0.0;
  std::size_t pass_count = 0;
  std::size_t group_size = 0;
  bool operator==(const SurvivorSummary&) const = default;
};

struct RoundRecord {
  std::size_t step = 0;
  std::size_t round = 0;
  std::vector<PromptId> sampled_ids;
  std::vector<SurvivorSummary> accuracy_survivors;
  FilterDecision length_decision;
  std::vector<PromptId> kept_ids;
  // Aggregates over every sampled response in the round.
  double reward_sum = 0.0;
  double length_sum = 0.0;
  std::size_t responses = 0;
};

struct PoolStats {
  std::size_t rounds_used = 0;
  std::size_t prompts_sampled = 0;
  std::size_t rollouts_generated = 0;
  std::size_t accuracy_survivors = 0;
  std::size_t length_survivors = 0;
  std::size_t pool_size = 0;
  std::size_t target_size = 0;

  double accuracy_survival() const;  // accuracy survivors / sampled
  double length_survival() const;    // length survivors / accuracy survivors
  double overall_survival() const;   // length survivors / sampled
};

PoolStats pool_stats(const std::vector<RoundRecord>& rounds, std::size_t group_size,
                     std::size_t target_size);

struct FillResult {
  TrainingBatch batch;
  PoolStats stats;
  std::vector<RoundRecord> rounds;
};

/// Raised when max_rounds pass without reaching train_batch pooled groups.
class StarvationError : public std::runtime_error {
 public:
  StarvationError(PoolStats stats, std::vector<RoundRecord> rounds);
  const PoolStats& stats() const { return stats_; }
  const std::vector<RoundRecord>& rounds() const { return rounds_; }

 private:
  PoolStats stats_;
  std::vector<RoundRecord> rounds_;
};

FillResult fill_batch(PromptSource& prompt_source, const RolloutFn& rollout_fn,
                      const FilterSpec& length_filter, const SamplerConfig& cfg, std::size_t step = 0);

}  // namespace lspo
