#include "lspo/scoring.hpp"

#include <algorithm>
#include <stdexcept>

namespace lspo {

void RewardConfig::validate() const {
  if (!(cache > 0 && cache < max_limit))
    throw std::invalid_argument("reward config requires 0 < cache < max_limit");
}

double overlong_penalty(std::size_t length, const RewardConfig& cfg) {
  const std::size_t soft = cfg.max_limit - cfg.cache;
  if (length <= soft) return 0.0;
  if (length <= cfg.max_limit)
    return (static_cast<double>(soft) - static_cast<double>(length)) / static_cast<double>(cfg.cache);
  return -1.0;
}

double total_reward(bool correct, std::size_t length, const RewardConfig& cfg) {
  const double base = correct ? cfg.correct_reward : cfg.incorrect_reward;
  return cfg.overlong_penalty ? base + overlong_penalty(length, cfg) : base;
}

double total_reward(const Response& response, const RewardConfig& cfg) {
  return total_reward(response.correct(), response.length(), cfg);
}

bool verify_answer(std::span<const Token> answer_segment, std::span<const Token> reference) {
  return std::equal(answer_segment.begin(), answer_segment.end(), reference.begin(), reference.end());
}

double avg_at_k(const std::vector<bool>& verdicts, std::size_t k) {
  if (k == 0) throw std::invalid_argument("avg@k requires k >= 1");
  if (verdicts.size() != k) throw std::invalid_argument("avg@k: expected exactly k verdicts");
  const auto hits = std::count(verdicts.begin(), verdicts.end(), true);
  return static_cast<double>(hits) / static_cast<double>(k);
}

}  // namespace lspo
