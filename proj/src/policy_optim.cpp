#include "lspo/policy_optim.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace lspo {
namespace {

struct TokenTerm {
  double value;
  double grad;  // d value / d logprob_new
  bool clipped;
  double ratio;
};

TokenTerm clipped_token(double lp_new, double lp_old, double adv, double lo, double hi) {
  const double r = token_ratio(lp_new, lp_old);
  const double unclipped = r * adv;
  const double clipped = std::clamp(r, lo, hi) * adv;
  if (unclipped <= clipped) return {unclipped, adv * r, false, r};
  return {clipped, 0.0, true, r};
}

class GrpoObjective final : public SurrogateObjective {
 public:
  explicit GrpoObjective(const SurrogateLossConfig& cfg) : lo_(cfg.clip_low()), hi_(cfg.clip_high()), beta_(cfg.beta) {}

  std::string_view name() const override { return "grpo"; }
  bool uses_reference() const override { return beta_ > 0.0; }

  ObjectiveEval evaluate(const TokenBatch& batch, bool with_grad) const override {
    batch.validate(uses_reference());
    ObjectiveEval out;
    const double n_resp = static_cast<double>(batch.responses.size());
    std::vector<double> per_response;
    std::vector<double> ratios;
    per_response.reserve(batch.responses.size());
    std::vector<double> terms;
    for (const auto& seq : batch.responses) {
      const std::size_t len = seq.logprob_new.size();
      const double inv_len = 1.0 / static_cast<double>(len);
      terms.assign(len, 0.0);
      std::vector<double> g(with_grad ? len : 0, 0.0);
      for (std::size_t t = 0; t < len; ++t) {
        const auto term = clipped_token(seq.logprob_new[t], seq.logprob_old[t], seq.advantage, lo_, hi_);
        double value = term.value;
        double grad = term.grad;
        if (beta_ > 0.0) {
          value -= beta_ * kl_penalty(seq.logprob_new[t], seq.logprob_ref[t]);
          grad -= beta_ * (1.0 - std::exp(seq.logprob_ref[t] - seq.logprob_new[t]));
        }
        terms[t] = value;
        if (with_grad) g[t] = grad * inv_len / n_resp;
        out.clipped_tokens += term.clipped ? 1 : 0;
        ratios.push_back(term.ratio);
      }
      per_response.push_back(pairwise_sum(terms) * inv_len);
      if (with_grad) out.grad.push_back(std::move(g));
    }
    out.tokens = ratios.size();
    out.value = pairwise_sum(per_response) / n_resp;
    out.mean_ratio = pairwise_sum(ratios) / static_cast<double>(out.tokens);
    return out;
  }

 private:
  double lo_, hi_, beta_;
};

class DapoObjective final : public SurrogateObjective {
 public:
  explicit DapoObjective(const SurrogateLossConfig& cfg) : lo_(cfg.clip_low()), hi_(cfg.clip_high()) {}

  std::string_view name() const override { return "dapo"; }
  bool uses_reference() const override { return false; }

  ObjectiveEval evaluate(const TokenBatch& batch, bool with_grad) const override {
    batch.validate(false);
    ObjectiveEval out;
    const double total = static_cast<double>(batch.total_tokens());
    std::vector<double> per_response;
    std::vector<double> ratios;
    std::vector<double> terms;
    for (const auto& seq : batch.responses) {
      const std::size_t len = seq.logprob_new.size();
      terms.assign(len, 0.0);
      std::vector<double> g(with_grad ? len : 0, 0.0);
      for (std::size_t t = 0; t < len; ++t) {
        const auto term = clipped_token(seq.logprob_new[t], seq.logprob_old[t], seq.advantage, lo_, hi_);
        terms[t] = term.value;
        if (with_grad) g[t] = term.grad / total;
        out.clipped_tokens += term.clipped ? 1 : 0;
        ratios.push_back(term.ratio);
      }
      per_response.push_back(pairwise_sum(terms));
      if (with_grad) out.grad.push_back(std::move(g));
    }
    out.tokens = ratios.size();
    out.value = pairwise_sum(per_response) / total;
    out.mean_ratio = pairwise_sum(ratios) / static_cast<double>(out.tokens);
    return out;
  }

 private:
  double lo_, hi_;
};

void check_finite(std::span<const double> grad, std::size_t mini_batch) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i]))
      throw NonFiniteGradient(
          fmt::format("non-finite gradient in mini-batch {} at parameter {} (value {})", mini_batch, i, grad[i]));
  }
}

}  // namespace

std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::grpo: return "grpo";
    case Algorithm::dapo: return "dapo";
    case Algorithm::gspo: return "gspo";
  }
  return "unknown";
}

Algorithm parse_algorithm(std::string_view s) {
  if (s == "grpo") return Algorithm::grpo;
  if (s == "dapo") return Algorithm::dapo;
  if (s == "gspo") return Algorithm::gspo;
  throw std::invalid_argument("unknown algorithm: " + std::string(s));
}

void SurrogateLossConfig::validate() const {
  for (double e : {eps, eps_low, eps_high})
    if (!(e > 0.0 && e < 1.0)) throw std::invalid_argument("clip widths must lie in (0, 1)");
  if (!(beta >= 0.0)) throw std::invalid_argument("beta must be >= 0");
  if (!(advantage_eps > 0.0 && advantage_eps <= 1e-4))
    throw std::invalid_argument("advantage_eps must lie in (0, 1e-4]");
}

double SurrogateLossConfig::clip_low() const { return algorithm == Algorithm::dapo ? 1.0 - eps_low : 1.0 - eps; }
double SurrogateLossConfig::clip_high() const { return algorithm == Algorithm::dapo ? 1.0 + eps_high : 1.0 + eps; }

std::vector<double> group_advantages(std::span<const double> rewards, double advantage_eps) {
  const auto stats = reward_stats(rewards);
  std::vector<double> out;
  out.reserve(rewards.size());
  for (double r : rewards) out.push_back((r - stats.mean) / (stats.std + advantage_eps));
  return out;
}

double token_ratio(double logprob_new, double logprob_old) { return std::exp(logprob_new - logprob_old); }

double clipped_term(double ratio, double advantage, double lo, double hi) {
  return std::min(ratio * advantage, std::clamp(ratio, lo, hi) * advantage);
}

double kl_penalty(double logprob_new, double logprob_ref) {
  const double d = logprob_ref - logprob_new;
  return std::exp(d) - d - 1.0;
}

void TokenBatch::validate(bool require_ref) const {
  if (responses.empty()) throw std::invalid_argument("token batch is empty");
  for (const auto& s : responses) {
    if (s.logprob_new.empty()) throw std::invalid_argument("token batch: empty response");
    if (s.logprob_old.size() != s.logprob_new.size())
      throw std::invalid_argument("token batch: old/new logprob counts differ");
    if (require_ref && s.logprob_ref.size() != s.logprob_new.size())
      throw std::invalid_argument("token batch: reference logprob count differs");
  }
}

std::size_t TokenBatch::total_tokens() const {
  std::size_t n = 0;
  for (const auto& s : responses) n += s.logprob_new.size();
  return n;
}

std::unique_ptr<SurrogateObjective> make_objective(const SurrogateLossConfig& cfg) {
  cfg.validate();
  switch (cfg.algorithm) {
    case Algorithm::grpo: return std::make_unique<GrpoObjective>(cfg);
    case Algorithm::dapo: return std::make_unique<DapoObjective>(cfg);
    case Algorithm::gspo: break;
  }
  throw std::invalid_argument("gspo objective is not built in; supply a SurrogateObjective implementation");
}

double grpo_objective(const TokenBatch& batch, const SurrogateLossConfig& cfg) {
  if (cfg.algorithm != Algorithm::grpo) throw std::invalid_argument("grpo_objective requires algorithm = grpo");
  return GrpoObjective(cfg).evaluate(batch, false).value;
}

double dapo_objective(const TokenBatch& batch, const SurrogateLossConfig& cfg) {
  if (cfg.algorithm != Algorithm::dapo) throw std::invalid_argument("dapo_objective requires algorithm = dapo");
  return DapoObjective(cfg).evaluate(batch, false).value;
}

double pairwise_sum(std::span<const double> values) {
  if (values.size() <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

std::string_view to_string(OptimizerMode m) { return m == OptimizerMode::sgd ? "sgd" : "rmsprop"; }

OptimizerMode parse_optimizer_mode(std::string_view s) {
  if (s == "sgd") return OptimizerMode::sgd;
  if (s == "rmsprop") return OptimizerMode::rmsprop;
  throw std::invalid_argument("unknown optimizer mode: " + std::string(s));
}

void OptimizerConfig::validate() const {
  if (mini_batch < 1) throw std::invalid_argument("mini_batch must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  if (!(rms_decay >= 0.0 && rms_decay < 1.0)) throw std::invalid_argument("rms_decay must lie in [0, 1)");
  if (!(rms_eps > 0.0)) throw std::invalid_argument("rms_eps must be > 0");
}

double UpdateStats::mean_objective() const {
  if (mini_batches.empty()) return 0.0;
  double s = 0.0;
  for (const auto& m : mini_batches) s += m.objective;
  return s / static_cast<double>(mini_batches.size());
}

double UpdateStats::mean_clip_fraction() const {
  if (mini_batches.empty()) return 0.0;
  double s = 0.0;
  for (const auto& m : mini_batches) s += m.clip_fraction;
  return s / static_cast<double>(mini_batches.size());
}

TokenBatch build_token_batch(std::span<const RolloutGroup> groups, const DifferentiablePolicy& policy,
                             const DifferentiablePolicy* reference, double advantage_eps) {
  TokenBatch batch;
  for (const auto& g : groups) {
    const auto rewards = g.rewards();
    const auto adv = group_advantages(rewards, advantage_eps);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto& resp = g.responses()[i];
      TokenSequence seq;
      seq.logprob_old = resp.token_logprobs_old();
      seq.logprob_new = policy.sequence_logprobs(g.prompt().payload, resp.tokens());
      if (reference) seq.logprob_ref = reference->sequence_logprobs(g.prompt().payload, resp.tokens());
      seq.advantage = adv[i];
      batch.responses.push_back(std::move(seq));
    }
  }
  return batch;
}

std::vector<double> objective_gradient(const SurrogateObjective& objective, std::span<const RolloutGroup> groups,
                                       const DifferentiablePolicy& policy, const DifferentiablePolicy* reference,
                                       double advantage_eps, ObjectiveEval* eval_out) {
  if (objective.uses_reference() && reference == nullptr)
    throw std::invalid_argument("objective uses a KL term but no reference policy was given");
  const auto batch = build_token_batch(groups, policy, objective.uses_reference() ? reference : nullptr, advantage_eps);
  auto eval = objective.evaluate(batch, true);
  std::vector<double> grad(policy.num_parameters(), 0.0);
  std::size_t k = 0;
  for (const auto& g : groups) {
    for (const auto& resp : g.responses()) {
      policy.accumulate_logprob_gradient(g.prompt().payload, resp.tokens(), eval.grad[k], grad);
      ++k;
    }
  }
  if (eval_out) *eval_out = std::move(eval);
  return grad;
}

PolicyUpdater::PolicyUpdater(SurrogateLossConfig loss, OptimizerConfig optim)
    : PolicyUpdater(make_objective(loss), loss, optim) {}

PolicyUpdater::PolicyUpdater(std::unique_ptr<SurrogateObjective> objective, SurrogateLossConfig loss,
                             OptimizerConfig optim)
    : objective_(std::move(objective)), loss_(loss), optim_(optim) {
  if (!objective_) throw std::invalid_argument("policy updater needs an objective");
  loss_.validate();
  optim_.validate();
}

UpdateStats PolicyUpdater::update_step(DifferentiablePolicy& policy, const DifferentiablePolicy* reference,
                                       const TrainingBatch& batch) {
  UpdateStats stats;
  const std::span<const RolloutGroup> all(batch.groups);
  for (std::size_t begin = 0, mb = 0; begin < all.size(); begin += optim_.mini_batch, ++mb) {
    const auto slice = all.subspan(begin, std::min(optim_.mini_batch, all.size() - begin));
    ObjectiveEval eval;
    const auto grad = objective_gradient(*objective_, slice, policy, reference, loss_.advantage_eps, &eval);
    check_finite(grad, mb);

    double sq = 0.0;
    for (double g : grad) sq += g * g;

    auto params = policy.parameters();
    if (optim_.mode == OptimizerMode::sgd) {
      for (std::size_t i = 0; i < params.size(); ++i) params[i] += optim_.lr * grad[i];
    } else {
      second_moment_.resize(params.size(), 0.0);
      for (std::size_t i = 0; i < params.size(); ++i) {
        second_moment_[i] = optim_.rms_decay * second_moment_[i] + (1.0 - optim_.rms_decay) * grad[i] * grad[i];
        params[i] += optim_.lr * grad[i] / (std::sqrt(second_moment_[i]) + optim_.rms_eps);
      }
    }

    MiniBatchStats m;
    m.objective = eval.value;
    m.clip_fraction = eval.clip_fraction();
    m.mean_ratio = eval.mean_ratio;
    m.grad_norm = std::sqrt(sq);
    m.groups = slice.size();
    m.tokens = eval.tokens;
    stats.mini_batches.push_back(m);
  }
  return stats;
}

}  // namespace lspo
