#include "lspo/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace lspo {

Response Response::make(std::vector<Token> tokens, std::vector<double> token_logprobs_old,
                        bool correct, double reward) {
  if (tokens.empty()) throw std::invalid_argument("response must contain at least one token");
  if (token_logprobs_old.size() != tokens.size())
    throw std::invalid_argument("token_logprobs_old must have one entry per token");
  for (double lp : token_logprobs_old) {
    if (!(lp <= 0.0)) throw std::invalid_argument("token log-probabilities must be <= 0");
  }
  Response r;
  r.tokens_ = std::move(tokens);
  r.logprobs_old_ = std::move(token_logprobs_old);
  r.correct_ = correct;
  r.reward_ = reward;
  return r;
}

Response Response::with_reward(double reward) const {
  Response r = *this;
  r.reward_ = reward;
  return r;
}

std::vector<double> RolloutGroup::rewards() const {
  std::vector<double> out;
  out.reserve(responses_.size());
  for (const auto& r : responses_) out.push_back(r.reward());
  return out;
}

RolloutGroup make_group(Prompt prompt, std::vector<Response> responses) {
  if (responses.empty()) throw std::invalid_argument("empty group");
  RolloutGroup g;
  std::size_t total = 0;
  for (const auto& r : responses) {
    total += r.length();
    if (r.correct()) ++g.pass_count_;
  }
  g.avg_length_ = static_cast<double>(total) / static_cast<double>(responses.size());
  g.prompt_ = std::move(prompt);
  g.responses_ = std::move(responses);
  return g;
}

RewardStats reward_stats(std::span<const double> rewards) {
  if (rewards.empty()) return {};
  const double n = static_cast<double>(rewards.size());
  double sum = 0.0;
  for (double r : rewards) sum += r;
  const double mean = sum / n;
  double ss = 0.0;
  for (double r : rewards) ss += (r - mean) * (r - mean);
  return {mean, std::sqrt(ss / n)};
}

RewardStats group_reward_stats(const RolloutGroup& group) {
  const auto rs = group.rewards();
  return reward_stats(rs);
}

std::size_t GroupSummary::pass_count() const {
  return static_cast<std::size_t>(std::count(correct.begin(), correct.end(), true));
}

GroupSummary summarize(const RolloutGroup& group) {
  GroupSummary s;
  s.prompt_id = group.prompt().id;
  s.avg_length = group.avg_length();
  for (const auto& r : group.responses()) {
    s.lengths.push_back(r.length());
    s.rewards.push_back(r.reward());
    s.correct.push_back(r.correct());
  }
  return s;
}

nlohmann::json to_json(const GroupSummary& s) {
  return nlohmann::json{{"prompt_id", s.prompt_id},
                        {"lengths", s.lengths},
                        {"rewards", s.rewards},
                        {"correct", s.correct},
                        {"avg_length", s.avg_length}};
}

GroupSummary group_summary_from_json(const nlohmann::json& j) {
  GroupSummary s;
  s.prompt_id = j.at("prompt_id").get<PromptId>();
  s.lengths = j.at("lengths").get<std::vector<std::size_t>>();
  s.rewards = j.at("rewards").get<std::vector<double>>();
  s.correct = j.at("correct").get<std::vector<bool>>();
  s.avg_length = j.at("avg_length").get<double>();
  if (s.lengths.size() != s.rewards.size() || s.lengths.size() != s.correct.size())
    throw std::invalid_argument("group record: field lengths disagree");
  return s;
}

std::string group_record_line(const RolloutGroup& group) { return to_json(summarize(group)).dump(); }

GroupSummary parse_group_record_line(const std::string& line) {
  return group_summary_from_json(nlohmann::json::parse(line));
}

}  // namespace lspo
