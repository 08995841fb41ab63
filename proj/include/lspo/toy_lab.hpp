#pragma once

/**
 * Desk-scale testbed.
 *
 * ToyTask is a verifiable lookup task. Vocabulary layout for M answer
 * classes:
 *
 *   [0, M)        prompt tokens ("question a")
 *   [M, 2M)       answer tokens; the reference answer to a is M + perm[a]
 *   2M            filler ("think") token
 *   2M + 1        EOS
 *
 * A response is correct iff it ends in EOS and the tokens right before EOS
 * equal the reference answer. TinyPolicy only sees the last few tokens, so
 * every filler token pushes the question further out of view: long
 * responses are more often wrong by construction.
 *
 * TinyPolicy is a single linear map from one-hot encodings of the last
 * `context_window` tokens (with a BOS pad symbol) to next-token logits.
 */

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "lspo/batch_builder.hpp"
#include "lspo/core_model.hpp"
#include "lspo/policy_optim.hpp"
#include "lspo/rng.hpp"
#include "lspo/scoring.hpp"

namespace lspo {

struct ToyTaskConfig {
  std::size_t num_answers = 4;
  std::size_t max_len = 64;
  std::size_t train_size = 2048;
  std::size_t eval_size = 64;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const ToyTaskConfig&) const = default;
};

class ToyTask {
 public:
  explicit ToyTask(const ToyTaskConfig& cfg);

  std::size_t vocab_size() const { return 2 * num_answers_ + 2; }
  std::size_t num_answers() const { return num_answers_; }
  std::size_t max_len() const { return max_len_; }
  Token filler_token() const { return static_cast<Token>(2 * num_answers_); }
  Token eos_token() const { return static_cast<Token>(2 * num_answers_ + 1); }

  Prompt make_prompt(PromptId id, std::size_t question) const;
  bool is_correct(const Prompt& prompt, std::span<const Token> response) const;

  const std::vector<Prompt>& train_set() const { return train_; }
  const std::vector<Prompt>& eval_set() const { return eval_; }

 private:
  std::size_t num_answers_;
  std::size_t max_len_;
  std::vector<std::size_t> answer_map_;
  std::vector<Prompt> train_;
  std::vector<Prompt> eval_;
};

class TinyPolicy final : public DifferentiablePolicy {
 public:
  TinyPolicy(std::size_t vocab_size, std::size_t context_window, double temperature = 1.0);

  /// Weights drawn from N(0, scale^2) via a seeded Box-Muller.
  static TinyPolicy random_init(std::size_t vocab_size, std::size_t context_window, double scale,
                                std::uint64_t seed, double temperature = 1.0);

  std::size_t vocab_size() const { return vocab_; }
  std::size_t context_window() const { return window_; }
  double temperature() const { return temperature_; }
  void set_temperature(double t);

  std::size_t num_parameters() const override { return params_.size(); }
  std::span<double> parameters() override { return params_; }
  std::span<const double> parameters() const override { return params_; }

  double& weight(std::size_t token, std::size_t feature);
  double& bias(std::size_t token);
  std::size_t num_features() const { return window_ * (vocab_ + 1); }

  /// Raw logits given the full history (context followed by generated
  /// tokens); only the trailing window is read.
  std::vector<double> logits(std::span<const Token> history) const;
  /// log softmax(logits / temperature)
  std::vector<double> next_token_logprobs(std::span<const Token> history) const;

  std::vector<double> sequence_logprobs(std::span<const Token> context, std::span<const Token> tokens) const override;
  void accumulate_logprob_gradient(std::span<const Token> context, std::span<const Token> tokens,
                                   std::span<const double> weights, std::span<double> grad) const override;

 private:
  std::vector<std::size_t> active_features(std::span<const Token> history) const;
  void check_token(Token t) const;

  std::size_t vocab_;
  std::size_t window_;
  double temperature_;
  std::vector<double> params_;  // weights [vocab][features] row-major, then bias [vocab]
};

/// log-probabilities of `tokens` following `context`.
std::vector<double> logprob_of(const TinyPolicy& policy, std::span<const Token> tokens,
                               std::span<const Token> context);

struct SampleOptions {
  bool greedy = false;
};

/// Autoregressive sampling until EOS or max_len. Records per-token
/// logprobs under the sampling parameters as logprob_old and scores the
/// response with `reward`.
Response sample_response(const TinyPolicy& policy, const ToyTask& task, const Prompt& prompt, Rng& rng,
                         const RewardConfig& reward, SampleOptions opts = {});
Response sample_response(const TinyPolicy& policy, const ToyTask& task, const Prompt& prompt,
                         std::uint64_t rng_seed, const RewardConfig& reward, SampleOptions opts = {});

/// G responses seeded by (run_seed, step, round, prompt id).
RolloutGroup toy_rollout(const TinyPolicy& policy, const ToyTask& task, const Prompt& prompt,
                         const RolloutRequest& request, std::size_t group_size, std::uint64_t run_seed,
                         const RewardConfig& reward);

/// Central differences, one coordinate at a time. Throws std::domain_error
/// on a non-finite objective value.
std::vector<double> finite_difference_grad(const std::function<double(std::span<const double>)>& objective,
                                           std::span<const double> params, double h = 1e-5);

struct ScriptEntry {
  std::size_t length = 1;
  bool correct = false;
};

/// Deterministic table: (prompt id, round) -> G scripted responses, with an
/// optional round-independent fallback per prompt.
class ScriptedRolloutProvider {
 public:
  explicit ScriptedRolloutProvider(std::size_t group_size, RewardConfig reward = {});

  std::size_t group_size() const { return group_size_; }
  /// Throws std::invalid_argument unless entries.size() == group_size.
  void set(PromptId id, std::size_t round, std::vector<ScriptEntry> entries);
  void set_default(PromptId id, std::vector<ScriptEntry> entries);

  const std::vector<ScriptEntry>& entries(PromptId id, std::size_t round) const;
  const RewardConfig& reward() const { return reward_; }

 private:
  void check(const std::vector<ScriptEntry>& entries) const;

  std::size_t group_size_;
  RewardConfig reward_;
  std::map<std::pair<PromptId, std::size_t>, std::vector<ScriptEntry>> per_round_;
  std::map<PromptId, std::vector<ScriptEntry>> fallback_;
};

/// Builds the scripted group with synthetic token content. Throws
/// std::out_of_range when no entry exists.
RolloutGroup scripted_rollout(const ScriptedRolloutProvider& provider, const Prompt& prompt, std::size_t round);

/// Convenience: uniform entries, `correct` of them passing.
std::vector<ScriptEntry> script_group(std::size_t group_size, std::size_t length, std::size_t correct);

}  // namespace lspo
