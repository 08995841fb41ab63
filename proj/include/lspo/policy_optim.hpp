#pragma once

/**
 * Clipped-surrogate policy optimization over rollout groups.
 *
 * Objectives follow the maximization convention: grpo_objective and
 * dapo_objective return the value to be increased, and update_step takes a
 * gradient ascent step. The two objectives differ only in aggregation:
 *
 *   grpo: mean over responses of the per-response token mean of
 *         min(r A, clip(r, 1 - eps, 1 + eps) A) - beta * KL
 *   dapo: sum over all tokens of min(r A, clip(r, 1 - eps_low, 1 + eps_high) A)
 *         divided by the total token count, no KL term
 *
 * where r = exp(logprob_new - logprob_old) per token and A is the
 * group-normalized advantage of the token's response.
 */

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lspo/core_model.hpp"

namespace lspo {

enum class Algorithm { grpo, dapo, gspo };

std::string_view to_string(Algorithm a);
Algorithm parse_algorithm(std::string_view s);

struct SurrogateLossConfig {
  Algorithm algorithm = Algorithm::grpo;
  double eps = 0.2;
  double eps_low = 0.2;
  double eps_high = 0.28;
  double beta = 0.0;
  double advantage_eps = 1e-6;

  void validate() const;
  double clip_low() const;
  double clip_high() const;
  bool operator==(const SurrogateLossConfig&) const = default;
};

/// (r - mean) / (std + advantage_eps) with population std.
std::vector<double> group_advantages(std::span<const double> rewards, double advantage_eps);

/// exp(logprob_new - logprob_old)
double token_ratio(double logprob_new, double logprob_old);

/// min(ratio * adv, clamp(ratio, lo, hi) * adv)
double clipped_term(double ratio, double advantage, double lo, double hi);

/// k3 estimator: exp(ref - new) - (ref - new) - 1, always >= 0.
double kl_penalty(double logprob_new, double logprob_ref);

struct TokenSequence {
  std::vector<double> logprob_old;
  std::vector<double> logprob_new;
  std::vector<double> logprob_ref;  // may be empty when the KL term is off
  double advantage = 0.0;
};

struct TokenBatch {
  std::vector<TokenSequence> responses;

  /// Throws std::invalid_argument on mismatched triple counts or empty
  /// responses.
  void validate(bool require_ref) const;
  std::size_t total_tokens() const;
};

struct ObjectiveEval {
  double value = 0.0;
  /// d value / d logprob_new, one entry per token of each response.
  std::vector<std::vector<double>> grad;
  std::size_t tokens = 0;
  std::size_t clipped_tokens = 0;
  double mean_ratio = 0.0;

  double clip_fraction() const {
    return tokens == 0 ? 0.0 : static_cast<double>(clipped_tokens) / static_cast<double>(tokens);
  }
};

class SurrogateObjective {
 public:
  virtual ~SurrogateObjective() = default;
  virtual std::string_view name() const = 0;
  virtual bool uses_reference() const = 0;
  virtual ObjectiveEval evaluate(const TokenBatch& batch, bool with_grad) const = 0;
};

/// Throws std::invalid_argument for gspo: its sequence-level objective is
/// not defined here and must be supplied by the caller.
std::unique_ptr<SurrogateObjective> make_objective(const SurrogateLossConfig& cfg);

double grpo_objective(const TokenBatch& batch, const SurrogateLossConfig& cfg);
double dapo_objective(const TokenBatch& batch, const SurrogateLossConfig& cfg);

/// Fixed-order pairwise summation; identical results for any caller.
double pairwise_sum(std::span<const double> values);

/// Policy with exact, differentiable per-token log-probabilities.
class DifferentiablePolicy {
 public:
  virtual ~DifferentiablePolicy() = default;
  virtual std::size_t num_parameters() const = 0;
  virtual std::span<double> parameters() = 0;
  virtual std::span<const double> parameters() const = 0;
  /// log pi(tokens[t] | context, tokens[<t]) for every t.
  virtual std::vector<double> sequence_logprobs(std::span<const Token> context,
                                                std::span<const Token> tokens) const = 0;
  /// grad += sum_t weights[t] * d logprob_t / d params
  virtual void accumulate_logprob_gradient(std::span<const Token> context, std::span<const Token> tokens,
                                           std::span<const double> weights, std::span<double> grad) const = 0;
};

enum class OptimizerMode { sgd, rmsprop };

std::string_view to_string(OptimizerMode m);
OptimizerMode parse_optimizer_mode(std::string_view s);

struct OptimizerConfig {
  std::size_t mini_batch = 32;  // groups per gradient step
  double lr = 1e-6;
  OptimizerMode mode = OptimizerMode::sgd;
  double rms_decay = 0.99;
  double rms_eps = 1e-8;

  void validate() const;
  bool operator==(const OptimizerConfig&) const = default;
};

struct MiniBatchStats {
  double objective = 0.0;
  double clip_fraction = 0.0;
  double mean_ratio = 0.0;
  double grad_norm = 0.0;
  std::size_t groups = 0;
  std::size_t tokens = 0;
};

struct UpdateStats {
  std::vector<MiniBatchStats> mini_batches;
  double mean_objective() const;
  double mean_clip_fraction() const;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Builds the token batch for a slice of groups: advantages from rewards,
/// old logprobs from the responses, new (and reference) logprobs evaluated
/// under the given policies.
TokenBatch build_token_batch(std::span<const RolloutGroup> groups, const DifferentiablePolicy& policy,
                             const DifferentiablePolicy* reference, double advantage_eps);

/// Gradient of an objective with respect to policy parameters for a slice
/// of groups.
std::vector<double> objective_gradient(const SurrogateObjective& objective, std::span<const RolloutGroup> groups,
                                       const DifferentiablePolicy& policy, const DifferentiablePolicy* reference,
                                       double advantage_eps, ObjectiveEval* eval_out = nullptr);

/// Mini-batch gradient ascent driver. Holds optimizer state across steps.
class PolicyUpdater {
 public:
  PolicyUpdater(SurrogateLossConfig loss, OptimizerConfig optim);
  PolicyUpdater(std::unique_ptr<SurrogateObjective> objective, SurrogateLossConfig loss, OptimizerConfig optim);

  /// One gradient step per mini-batch of `mini_batch` groups, in batch
  /// order. `reference` is required when the objective uses a KL term.
  UpdateStats update_step(DifferentiablePolicy& policy, const DifferentiablePolicy* reference,
                          const TrainingBatch& batch);

  const SurrogateObjective& objective() const { return *objective_; }

 private:
  std::unique_ptr<SurrogateObjective> objective_;
  SurrogateLossConfig loss_;
  OptimizerConfig optim_;
  std::vector<double> second_moment_;
};

}  // namespace lspo
