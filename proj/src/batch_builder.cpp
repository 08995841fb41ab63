#include "lspo/batch_builder.hpp"

#include <algorithm>
#include <future>
#include <numeric>
#include <optional>
#include <utility>

#include <fmt/format.h>

namespace lspo {
namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::vector<RolloutGroup> roll_out(const std::vector<Prompt>& prompts, const RolloutFn& rollout_fn,
                                   const RolloutRequest& request, std::size_t workers) {
  std::vector<std::optional<RolloutGroup>> slots(prompts.size());
  auto run_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) slots[i] = rollout_fn(prompts[i], request);
  };
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(prompts.size(), 1));
  if (workers == 1) {
    run_range(0, prompts.size());
  } else {
    std::vector<std::future<void>> jobs;
    const std::size_t chunk = (prompts.size() + workers - 1) / workers;
    for (std::size_t begin = 0; begin < prompts.size(); begin += chunk)
      jobs.push_back(std::async(std::launch::async, run_range, begin, std::min(begin + chunk, prompts.size())));
    for (auto& j : jobs) j.get();
  }
  std::vector<RolloutGroup> out;
  out.reserve(prompts.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

}  // namespace

std::string_view to_string(SelectionMode mode) {
  return mode == SelectionMode::random_uniform ? "random_uniform" : "first_fit";
}

SelectionMode parse_selection_mode(std::string_view s) {
  if (s == "random_uniform") return SelectionMode::random_uniform;
  if (s == "first_fit") return SelectionMode::first_fit;
  throw std::invalid_argument("unknown selection mode: " + std::string(s));
}

std::size_t SamplerConfig::effective_rollout_batch() const {
  return rollout_batch != 0 ? rollout_batch : oversample_factor * train_batch;
}

void SamplerConfig::validate() const {
  if (effective_rollout_batch() < 1) throw std::invalid_argument("sampler: rollout batch must be >= 1");
  if (train_batch < 1) throw std::invalid_argument("sampler: train batch must be >= 1");
  if (group_size < 2) throw std::invalid_argument("sampler: group size must be >= 2");
  if (max_rounds < 1) throw std::invalid_argument("sampler: max_rounds must be >= 1");
  if (workers < 1) throw std::invalid_argument("sampler: workers must be >= 1");
}

DatasetPromptSource::DatasetPromptSource(std::vector<Prompt> dataset) : dataset_(std::move(dataset)) {}

std::vector<Prompt> DatasetPromptSource::draw(std::size_t count, Rng& rng) {
  if (count > dataset_.size())
    throw std::invalid_argument(fmt::format("prompt source holds {} prompts, round needs {}", dataset_.size(), count));
  // Partial Fisher-Yates over indices.
  std::vector<std::size_t> idx(dataset_.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<Prompt> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + uniform_below(rng, idx.size() - i);
    std::swap(idx[i], idx[j]);
    out.push_back(dataset_[idx[i]]);
  }
  return out;
}

SequentialPromptSource::SequentialPromptSource(std::vector<Prompt> dataset) : dataset_(std::move(dataset)) {
  if (dataset_.empty()) throw std::invalid_argument("sequential prompt source needs at least one prompt");
}

std::vector<Prompt> SequentialPromptSource::draw(std::size_t count, Rng&) {
  std::vector<Prompt> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(dataset_[cursor_]);
    cursor_ = (cursor_ + 1) % dataset_.size();
  }
  return out;
}

double PoolStats::accuracy_survival() const { return ratio(accuracy_survivors, prompts_sampled); }
double PoolStats::length_survival() const { return ratio(length_survivors, accuracy_survivors); }
double PoolStats::overall_survival() const { return ratio(length_survivors, prompts_sampled); }

PoolStats pool_stats(const std::vector<RoundRecord>& rounds, std::size_t group_size, std::size_t target_size) {
  PoolStats s;
  s.rounds_used = rounds.size();
  s.target_size = target_size;
  for (const auto& r : rounds) {
    s.prompts_sampled += r.sampled_ids.size();
    s.accuracy_survivors += r.accuracy_survivors.size();
    s.length_survivors += r.kept_ids.size();
  }
  s.rollouts_generated = s.prompts_sampled * group_size;
  s.pool_size = s.length_survivors;
  return s;
}

StarvationError::StarvationError(PoolStats stats, std::vector<RoundRecord> rounds)
    : std::runtime_error(fmt::format("batch starvation: pooled {} of {} groups after {} rounds", stats.pool_size,
                                     stats.target_size, stats.rounds_used)),
      stats_(stats),
      rounds_(std::move(rounds)) {}

FillResult fill_batch(PromptSource& prompt_source, const RolloutFn& rollout_fn, const FilterSpec& length_filter,
                      const SamplerConfig& cfg, std::size_t step) {
  cfg.validate();
  length_filter.validate();

  const std::size_t per_round = cfg.effective_rollout_batch();
  std::vector<RolloutGroup> pool;
  std::vector<std::size_t> pool_rounds;
  std::vector<RoundRecord> rounds;

  for (std::size_t round = 0; pool.size() < cfg.train_batch; ++round) {
    if (round == cfg.max_rounds) {
      auto stats = pool_stats(rounds, cfg.group_size, cfg.train_batch);
      throw StarvationError(stats, std::move(rounds));
    }
    Rng prompt_rng(mix_seed({cfg.rng_seed, step, round, hash_tag("prompts")}));
    const auto prompts = prompt_source.draw(per_round, prompt_rng);
    const auto groups = roll_out(prompts, rollout_fn, RolloutRequest{step, round}, cfg.workers);

    RoundRecord rec;
    rec.step = step;
    rec.round = round;
    for (const auto& g : groups) {
      if (g.size() != cfg.group_size)
        throw std::invalid_argument(fmt::format("rollout returned {} responses, expected G = {}", g.size(), cfg.group_size));
      rec.sampled_ids.push_back(g.prompt().id);
      for (const auto& r : g.responses()) {
        rec.reward_sum += r.reward();
        rec.length_sum += static_cast<double>(r.length());
      }
      rec.responses += g.size();
    }

    auto chain = run_filter_chain(groups, length_filter);
    for (const auto& g : chain.accuracy_survivors)
      rec.accuracy_survivors.push_back({g.prompt().id, g.avg_length(), g.pass_count(), g.size()});
    rec.length_decision = std::move(chain.length_decision);
    for (auto& g : chain.kept) {
      rec.kept_ids.push_back(g.prompt().id);
      pool.push_back(std::move(g));
      pool_rounds.push_back(round);
    }
    rounds.push_back(std::move(rec));
  }

  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (cfg.selection == SelectionMode::random_uniform) {
    Rng select_rng(mix_seed({cfg.rng_seed, step, hash_tag("select")}));
    for (std::size_t i = 0; i < cfg.train_batch; ++i) {
      const std::size_t j = i + uniform_below(select_rng, order.size() - i);
      std::swap(order[i], order[j]);
    }
  }
  order.resize(cfg.train_batch);

  FillResult result;
  result.batch.target_size = cfg.train_batch;
  result.batch.rounds_used = rounds.size();
  for (std::size_t i : order) {
    result.batch.groups.push_back(std::move(pool[i]));
    result.batch.group_rounds.push_back(pool_rounds[i]);
  }
  result.stats = pool_stats(rounds, cfg.group_size, cfg.train_batch);
  result.rounds = std::move(rounds);
  return result;
}

}  // namespace lspo
