#pragma once

/**
 * Domain types shared by every stage of the pipeline: prompts, sampled
 * responses, rollout groups (G responses to one prompt) and the training
 * batch assembled from filtered groups.
 *
 * All types are immutable once built. Construction goes through the
 * validating factories (Response::make, make_group) which throw
 * std::invalid_argument on malformed input.
 */

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace lspo {

using Token = std::int32_t;
using PromptId = std::uint64_t;

struct Prompt {
  PromptId id = 0;
  std::vector<Token> payload;
  std::vector<Token> reference_answer;

  bool operator==(const Prompt&) const = default;
};

class Response {
 public:
  /// Validates length >= 1, one logprob per token, every logprob <= 0.
  static Response make(std::vector<Token> tokens, std::vector<double> token_logprobs_old,
                       bool correct, double reward);

  const std::vector<Token>& tokens() const { return tokens_; }
  const std::vector<double>& token_logprobs_old() const { return logprobs_old_; }
  std::size_t length() const { return tokens_.size(); }
  bool correct() const { return correct_; }
  double reward() const { return reward_; }

  /// Same response with a different total reward (reward shaping happens
  /// after sampling).
  Response with_reward(double reward) const;

 private:
  Response() = default;

  std::vector<Token> tokens_;
  std::vector<double> logprobs_old_;
  bool correct_ = false;
  double reward_ = 0.0;
};

class RolloutGroup {
 public:
  const Prompt& prompt() const { return prompt_; }
  const std::vector<Response>& responses() const { return responses_; }
  std::size_t size() const { return responses_.size(); }
  double avg_length() const { return avg_length_; }
  std::size_t pass_count() const { return pass_count_; }
  /// pass_count / G
  double accuracy() const {
    return static_cast<double>(pass_count_) / static_cast<double>(responses_.size());
  }
  std::vector<double> rewards() const;

 private:
  friend RolloutGroup make_group(Prompt prompt, std::vector<Response> responses);
  RolloutGroup() = default;

  Prompt prompt_;
  std::vector<Response> responses_;
  double avg_length_ = 0.0;
  std::size_t pass_count_ = 0;
};

/// Throws std::invalid_argument("empty group") when responses is empty.
RolloutGroup make_group(Prompt prompt, std::vector<Response> responses);

struct RewardStats {
  double mean = 0.0;
  double std = 0.0;  // population (divide by G)
};

RewardStats reward_stats(std::span<const double> rewards);
RewardStats group_reward_stats(const RolloutGroup& group);

struct TrainingBatch {
  std::vector<RolloutGroup> groups;
  /// Sampling round each group was drawn in, parallel to `groups`.
  std::vector<std::size_t> group_rounds;
  std::size_t target_size = 0;
  std::size_t rounds_used = 0;
};

/// Compact view of a group as written to run logs (no token content).
struct GroupSummary {
  PromptId prompt_id = 0;
  std::vector<std::size_t> lengths;
  std::vector<double> rewards;
  std::vector<bool> correct;
  double avg_length = 0.0;

  std::size_t pass_count() const;
  bool operator==(const GroupSummary&) const = default;
};

GroupSummary summarize(const RolloutGroup& group);

nlohmann::json to_json(const GroupSummary& summary);
GroupSummary group_summary_from_json(const nlohmann::json& j);

/// One group per line: {"prompt_id","lengths","rewards","correct","avg_length"}.
std::string group_record_line(const RolloutGroup& group);
GroupSummary parse_group_record_line(const std::string& line);

}  // namespace lspo
