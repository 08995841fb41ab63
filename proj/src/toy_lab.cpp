#include "lspo/toy_lab.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <fmt/format.h>

namespace lspo {

void ToyTaskConfig::validate() const {
  if (num_answers < 1 || 2 * num_answers + 2 > 32)
    throw std::invalid_argument("toy task: vocabulary (2 * num_answers + 2) must be within 32 tokens");
  if (max_len < 2) throw std::invalid_argument("toy task: max_len must be >= 2");
}

ToyTask::ToyTask(const ToyTaskConfig& cfg) : num_answers_(cfg.num_answers), max_len_(cfg.max_len) {
  cfg.validate();
  Rng rng(mix_seed({cfg.seed, hash_tag("toy-task")}));
  answer_map_.resize(num_answers_);
  for (std::size_t i = 0; i < num_answers_; ++i) answer_map_[i] = i;
  for (std::size_t i = num_answers_; i > 1; --i) std::swap(answer_map_[i - 1], answer_map_[uniform_below(rng, i)]);

  PromptId next_id = 0;
  for (std::size_t i = 0; i < cfg.train_size; ++i) train_.push_back(make_prompt(next_id++, uniform_below(rng, num_answers_)));
  for (std::size_t i = 0; i < cfg.eval_size; ++i) eval_.push_back(make_prompt(next_id++, uniform_below(rng, num_answers_)));
}

Prompt ToyTask::make_prompt(PromptId id, std::size_t question) const {
  if (question >= num_answers_) throw std::invalid_argument("toy task: question out of range");
  Prompt p;
  p.id = id;
  p.payload = {static_cast<Token>(question)};
  p.reference_answer = {static_cast<Token>(num_answers_ + answer_map_[question])};
  return p;
}

bool ToyTask::is_correct(const Prompt& prompt, std::span<const Token> response) const {
  const std::size_t ans = prompt.reference_answer.size();
  if (response.size() < ans + 1 || response.back() != eos_token()) return false;
  return verify_answer(response.subspan(response.size() - 1 - ans, ans), prompt.reference_answer);
}

TinyPolicy::TinyPolicy(std::size_t vocab_size, std::size_t context_window, double temperature)
    : vocab_(vocab_size), window_(context_window), temperature_(temperature) {
  if (vocab_ < 2) throw std::invalid_argument("tiny policy: vocabulary must hold at least 2 tokens");
  if (window_ < 1) throw std::invalid_argument("tiny policy: context window must be >= 1");
  set_temperature(temperature);
  params_.assign(vocab_ * num_features() + vocab_, 0.0);
}

TinyPolicy TinyPolicy::random_init(std::size_t vocab_size, std::size_t context_window, double scale,
                                   std::uint64_t seed, double temperature) {
  TinyPolicy p(vocab_size, context_window, temperature);
  Rng rng(mix_seed({seed, hash_tag("policy-init")}));
  for (auto& w : p.params_) {
    const double u1 = 1.0 - uniform01(rng);  // (0, 1]
    const double u2 = uniform01(rng);
    w = scale * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  return p;
}

void TinyPolicy::set_temperature(double t) {
  if (!(t > 0.0) || !std::isfinite(t)) throw std::invalid_argument("temperature must be positive and finite");
  temperature_ = t;
}

double& TinyPolicy::weight(std::size_t token, std::size_t feature) {
  return params_.at(token * num_features() + feature);
}

double& TinyPolicy::bias(std::size_t token) { return params_.at(vocab_ * num_features() + token); }

void TinyPolicy::check_token(Token t) const {
  if (t < 0 || static_cast<std::size_t>(t) >= vocab_)
    throw std::out_of_range(fmt::format("token {} outside vocabulary of size {}", t, vocab_));
}

std::vector<std::size_t> TinyPolicy::active_features(std::span<const Token> history) const {
  std::vector<std::size_t> f(window_);
  const std::size_t n = history.size();
  for (std::size_t p = 0; p < window_; ++p) {
    // Position p reads history[n - window + p], or BOS when that is before
    // the start.
    std::size_t symbol = vocab_;
    if (n + p >= window_) {
      const Token t = history[n + p - window_];
      check_token(t);
      symbol = static_cast<std::size_t>(t);
    }
    f[p] = p * (vocab_ + 1) + symbol;
  }
  return f;
}

std::vector<double> TinyPolicy::logits(std::span<const Token> history) const {
  const auto feats = active_features(history);
  const std::size_t nf = num_features();
  std::vector<double> z(vocab_);
  for (std::size_t k = 0; k < vocab_; ++k) {
    double s = params_[vocab_ * nf + k];
    for (std::size_t f : feats) s += params_[k * nf + f];
    z[k] = s;
  }
  return z;
}

std::vector<double> TinyPolicy::next_token_logprobs(std::span<const Token> history) const {
  auto z = logits(history);
  for (auto& v : z) v /= temperature_;
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  const double lse = m + std::log(s);
  for (auto& v : z) v -= lse;
  return z;
}

std::vector<double> TinyPolicy::sequence_logprobs(std::span<const Token> context, std::span<const Token> tokens) const {
  std::vector<Token> history(context.begin(), context.end());
  std::vector<double> out;
  out.reserve(tokens.size());
  for (Token t : tokens) {
    check_token(t);
    out.push_back(next_token_logprobs(history)[static_cast<std::size_t>(t)]);
    history.push_back(t);
  }
  return out;
}

void TinyPolicy::accumulate_logprob_gradient(std::span<const Token> context, std::span<const Token> tokens,
                                             std::span<const double> weights, std::span<double> grad) const {
  if (weights.size() != tokens.size()) throw std::invalid_argument("gradient weights must match token count");
  if (grad.size() != params_.size()) throw std::invalid_argument("gradient buffer has wrong size");
  const std::size_t nf = num_features();
  std::vector<Token> history(context.begin(), context.end());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto y = static_cast<std::size_t>(tokens[t]);
    check_token(tokens[t]);
    if (weights[t] != 0.0) {
      const auto lp = next_token_logprobs(history);
      const auto feats = active_features(history);
      for (std::size_t k = 0; k < vocab_; ++k) {
        const double d = weights[t] * ((k == y ? 1.0 : 0.0) - std::exp(lp[k])) / temperature_;
        for (std::size_t f : feats) grad[k * nf + f] += d;
        grad[vocab_ * nf + k] += d;
      }
    }
    history.push_back(tokens[t]);
  }
}

std::vector<double> logprob_of(const TinyPolicy& policy, std::span<const Token> tokens, std::span<const Token> context) {
  return policy.sequence_logprobs(context, tokens);
}

Response sample_response(const TinyPolicy& policy, const ToyTask& task, const Prompt& prompt, Rng& rng,
                         const RewardConfig& reward, SampleOptions opts) {
  if (policy.vocab_size() != task.vocab_size()) throw std::invalid_argument("policy and task vocabularies differ");
  std::vector<Token> history = prompt.payload;
  std::vector<Token> tokens;
  std::vector<double> logprobs;
  while (tokens.size() < task.max_len()) {
    const auto lp = policy.next_token_logprobs(history);
    std::size_t pick = 0;
    if (opts.greedy) {
      pick = static_cast<std::size_t>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    } else {
      const double u = uniform01(rng);
      double cum = 0.0;
      pick = lp.size();
      std::size_t last_nonzero = 0;
      for (std::size_t k = 0; k < lp.size(); ++k) {
        const double p = std::exp(lp[k]);
        if (p > 0.0) last_nonzero = k;
        cum += p;
        if (u < cum) {
          pick = k;
          break;
        }
      }
      if (pick == lp.size()) pick = last_nonzero;  // rounding left cum just below u
    }
    const auto tok = static_cast<Token>(pick);
    tokens.push_back(tok);
    logprobs.push_back(lp[pick]);
    history.push_back(tok);
    if (tok == task.eos_token()) break;
  }
  const bool correct = task.is_correct(prompt, tokens);
  const double r = total_reward(correct, tokens.size(), reward);
  return Response::make(std::move(tokens), std::move(logprobs), correct, r);
}

Response sample_response(const TinyPolicy& policy, const ToyTask& task, const Prompt& prompt, std::uint64_t rng_seed,
                         const RewardConfig& reward, SampleOptions opts) {
  Rng rng(rng_seed);
  return sample_response(policy, task, prompt, rng, reward, opts);
}

RolloutGroup toy_rollout(const TinyPolicy& policy, const ToyTask& task, const Prompt& prompt,
                         const RolloutRequest& request, std::size_t group_size, std::uint64_t run_seed,
                         const RewardConfig& reward) {
  Rng rng(mix_seed({run_seed, hash_tag("rollout"), request.step, request.round, prompt.id}));
  std::vector<Response> responses;
  responses.reserve(group_size);
  for (std::size_t i = 0; i < group_size; ++i) responses.push_back(sample_response(policy, task, prompt, rng, reward));
  return make_group(prompt, std::move(responses));
}

std::vector<double> finite_difference_grad(const std::function<double(std::span<const double>)>& objective,
                                           std::span<const double> params, double h) {
  std::vector<double> x(params.begin(), params.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = objective(x);
    x[i] = orig - h;
    const double fm = objective(x);
    x[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::domain_error(fmt::format("non-finite objective while differencing coordinate {}", i));
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

ScriptedRolloutProvider::ScriptedRolloutProvider(std::size_t group_size, RewardConfig reward)
    : group_size_(group_size), reward_(reward) {
  if (group_size_ < 1) throw std::invalid_argument("scripted provider: group size must be >= 1");
}

void ScriptedRolloutProvider::check(const std::vector<ScriptEntry>& entries) const {
  if (entries.size() != group_size_)
    throw std::invalid_argument(fmt::format("scripted group has {} entries, expected {}", entries.size(), group_size_));
  for (const auto& e : entries)
    if (e.length < 1) throw std::invalid_argument("scripted response length must be >= 1");
}

void ScriptedRolloutProvider::set(PromptId id, std::size_t round, std::vector<ScriptEntry> entries) {
  check(entries);
  per_round_[{id, round}] = std::move(entries);
}

void ScriptedRolloutProvider::set_default(PromptId id, std::vector<ScriptEntry> entries) {
  check(entries);
  fallback_[id] = std::move(entries);
}

const std::vector<ScriptEntry>& ScriptedRolloutProvider::entries(PromptId id, std::size_t round) const {
  if (auto it = per_round_.find({id, round}); it != per_round_.end()) return it->second;
  if (auto it = fallback_.find(id); it != fallback_.end()) return it->second;
  throw std::out_of_range(fmt::format("no script entry for prompt {} round {}", id, round));
}

RolloutGroup scripted_rollout(const ScriptedRolloutProvider& provider, const Prompt& prompt, std::size_t round) {
  std::vector<Response> responses;
  for (const auto& e : provider.entries(prompt.id, round)) {
    std::vector<Token> tokens(e.length, Token{1});
    std::vector<double> lps(e.length, std::log(0.5));
    responses.push_back(Response::make(std::move(tokens), std::move(lps), e.correct,
                                       total_reward(e.correct, e.length, provider.reward())));
  }
  return make_group(prompt, std::move(responses));
}

std::vector<ScriptEntry> script_group(std::size_t group_size, std::size_t length, std::size_t correct) {
  std::vector<ScriptEntry> out(group_size, ScriptEntry{length, false});
  for (std::size_t i = 0; i < std::min(correct, group_size); ++i) out[i].correct = true;
  return out;
}

}  // namespace lspo
