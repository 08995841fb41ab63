#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lspo/core_model.hpp"

namespace lspo {

struct RewardConfig {
  std::size_t max_limit = 2048;  // hard response-length cap, tokens
  std::size_t cache = 512;       // width of the linear penalty ramp, tokens
  double correct_reward = 1.0;
  double incorrect_reward = 0.0;
  bool overlong_penalty = true;

  /// Throws std::invalid_argument unless 0 < cache < max_limit.
  void validate() const;
  bool operator==(const RewardConfig&) const = default;
};

/// Piecewise length penalty: 0 up to max_limit - cache, a linear ramp down
/// to -1 at max_limit, and -1 beyond.
double overlong_penalty(std::size_t length, const RewardConfig& cfg);

/// Correctness reward plus overlong penalty (when enabled).
double total_reward(bool correct, std::size_t length, const RewardConfig& cfg);
double total_reward(const Response& response, const RewardConfig& cfg);

/// Exact token-sequence match of the answer segment.
bool verify_answer(std::span<const Token> answer_segment, std::span<const Token> reference);

/// Fraction of true verdicts; throws std::invalid_argument when
/// verdicts.size() != k or k == 0.
double avg_at_k(const std::vector<bool>& verdicts, std::size_t k);

}  // namespace lspo
