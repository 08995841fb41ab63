#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "lspo/batch_builder.hpp"
#include "lspo/toy_lab.hpp"
#include "test_helpers.hpp"

using namespace lspo;
using lspo::testing::ids_of;
using lspo::testing::prompt;

namespace {

std::vector<Prompt> prompts(std::size_t n) {
  std::vector<Prompt> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(prompt(i));
  return out;
}

SamplerConfig small_cfg() {
  SamplerConfig c;
  c.train_batch = 4;
  c.rollout_batch = 8;
  c.group_size = 4;
  c.max_rounds = 5;
  c.rng_seed = 99;
  return c;
}

RolloutFn from_script(const ScriptedRolloutProvider& script) {
  return [&script](const Prompt& p, const RolloutRequest& req) { return scripted_rollout(script, p, req.round); };
}

}  // namespace

TEST_CASE("one round fills the batch") {
  ScriptedRolloutProvider script(4);
  for (PromptId id = 0; id < 8; ++id) script.set_default(id, script_group(4, 10 * (id + 1), 2));
  SequentialPromptSource src(prompts(8));
  const auto res = fill_batch(src, from_script(script), FilterSpec::lspo(), small_cfg());
  CHECK(res.batch.groups.size() == 4);
  CHECK(res.batch.rounds_used == 1);
  CHECK(res.stats.accuracy_survivors == 8);
  CHECK(res.stats.length_survivors == 6);
  CHECK(res.rounds[0].kept_ids == std::vector<PromptId>{0, 1, 2, 5, 6, 7});
  for (auto id : ids_of(res.batch.groups)) CHECK((id <= 2 || id >= 5));
}

TEST_CASE("two rounds when the first one comes up short") {
  ScriptedRolloutProvider script(4);
  for (PromptId id = 0; id < 16; ++id) {
    const bool mixed = id % 8 < 3;
    script.set_default(id, script_group(4, 10 * (id % 8 + 1), mixed ? 1 : 4));
  }
  SequentialPromptSource src(prompts(16));
  const auto res = fill_batch(src, from_script(script), FilterSpec::lspo(), small_cfg());
  CHECK(res.batch.rounds_used == 2);
  CHECK(res.rounds.size() == 2);
  CHECK(res.rounds[0].kept_ids == std::vector<PromptId>{0, 1, 2});
  CHECK(res.rounds[1].kept_ids == std::vector<PromptId>{8, 9, 10});
  CHECK(res.stats.pool_size == 6);
  CHECK(res.batch.groups.size() == 4);
  REQUIRE(res.batch.group_rounds.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(res.batch.group_rounds[i] == (res.batch.groups[i].prompt().id < 8 ? 0u : 1u));
}

TEST_CASE("starvation is reported after max_rounds") {
  ScriptedRolloutProvider script(4);
  for (PromptId id = 0; id < 8; ++id) script.set_default(id, script_group(4, 12, 4));
  SequentialPromptSource src(prompts(8));
  try {
    fill_batch(src, from_script(script), FilterSpec::lspo(), small_cfg());
    FAIL("expected starvation");
  } catch (const StarvationError& e) {
    CHECK(e.rounds().size() == 5);
    CHECK(e.stats().rounds_used == 5);
    CHECK(e.stats().pool_size == 0);
    CHECK(e.stats().prompts_sampled == 40);
  }
}

TEST_CASE("per-round script entries override the fallback") {
  ScriptedRolloutProvider script(4);
  for (PromptId id = 0; id < 8; ++id) {
    script.set_default(id, script_group(4, 5, 0));
    script.set(id, 1, script_group(4, 5, 2));
  }
  SequentialPromptSource src(prompts(8));
  auto cfg = small_cfg();
  const auto res = fill_batch(src, from_script(script), FilterSpec::none(), cfg);
  CHECK(res.batch.rounds_used == 2);
  CHECK(res.rounds[0].kept_ids.empty());
  CHECK_THROWS_AS(script.set(0, 0, script_group(3, 5, 1)), std::invalid_argument);
}

TEST_CASE("pool stats ratios") {
  ScriptedRolloutProvider script(4);
  for (PromptId id = 0; id < 8; ++id) script.set_default(id, script_group(4, 10 * (id + 1), id < 4 ? 2 : 0));
  SequentialPromptSource src(prompts(8));
  auto cfg = small_cfg();
  cfg.train_batch = 2;
  const auto res = fill_batch(src, from_script(script), FilterSpec::lspo(), cfg);
  CHECK(res.stats.prompts_sampled == 8);
  CHECK(res.stats.rollouts_generated == 32);
  CHECK(res.stats.accuracy_survival() == doctest::Approx(0.5));
  // survivors 10,20,30,40: Q(.3)=20, Q(.65)=30, Q(.95)=40 -> all kept
  CHECK(res.stats.length_survivors == 4);
  CHECK(res.stats.length_survival() == doctest::Approx(1.0));
  CHECK(res.stats.overall_survival() == doctest::Approx(0.5));
}

TEST_CASE("first_fit selection takes pool order") {
  ScriptedRolloutProvider script(4);
  for (PromptId id = 0; id < 8; ++id) script.set_default(id, script_group(4, 10, 1));
  SequentialPromptSource src(prompts(8));
  auto cfg = small_cfg();
  cfg.selection = SelectionMode::first_fit;
  const auto res = fill_batch(src, from_script(script), FilterSpec::none(), cfg);
  CHECK(ids_of(res.batch.groups) == std::vector<PromptId>{0, 1, 2, 3});
}

TEST_CASE("dataset source draws distinct prompts within a round") {
  DatasetPromptSource src(prompts(20));
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const auto drawn = src.draw(20, rng);
    std::set<PromptId> ids;
    for (const auto& p : drawn) ids.insert(p.id);
    CHECK(ids.size() == 20);
  }
  CHECK_THROWS(src.draw(21, rng));
}

TEST_CASE("fill is deterministic for a fixed seed and worker count independent") {
  ScriptedRolloutProvider script(4);
  for (PromptId id = 0; id < 64; ++id) script.set_default(id, script_group(4, 1 + id * 7 % 50, id % 3 == 0 ? 4 : 2));
  auto run = [&](std::uint64_t seed, std::size_t workers) {
    DatasetPromptSource src(prompts(64));
    auto cfg = small_cfg();
    cfg.rng_seed = seed;
    cfg.workers = workers;
    cfg.train_batch = 8;
    cfg.rollout_batch = 12;
    return ids_of(fill_batch(src, from_script(script), FilterSpec::lspo(), cfg, 3).batch.groups);
  };
  CHECK(run(1, 1) == run(1, 1));
  CHECK(run(1, 1) == run(1, 4));
  CHECK(run(1, 1) != run(2, 1));
}

TEST_CASE("expected rounds match the binomial fill model") {
  // Each prompt survives independently with probability 1/2; no length
  // filter. Oracle: exact expectation of rounds needed for the running
  // Binomial(B_r, 1/2) sum to reach B_t.
  constexpr std::size_t br = 16, bt = 16;
  std::vector<double> binom(br + 1);
  for (std::size_t k = 0; k <= br; ++k) {
    double c = 1.0;
    for (std::size_t j = 0; j < k; ++j) c = c * static_cast<double>(br - j) / static_cast<double>(j + 1);
    binom[k] = c / 65536.0;
  }
  // p[s] = probability of having pooled s (< bt) after r rounds
  std::vector<double> p(bt, 0.0);
  p[0] = 1.0;
  double expected = 0.0;
  for (std::size_t r = 1; r <= 200; ++r) {
    std::vector<double> next(bt, 0.0);
    double unfinished = 0.0;
    for (std::size_t s = 0; s < bt; ++s)
      for (std::size_t k = 0; k <= br; ++k)
        if (s + k < bt) next[s + k] += p[s] * binom[k];
    for (std::size_t s = 0; s < bt; ++s) unfinished += p[s];
    expected += unfinished;
    p = next;
  }

  auto rollout = [](const Prompt& pr, const RolloutRequest& req) {
    Rng rng(mix_seed({req.step, req.round, pr.id}));
    const std::size_t correct = uniform_below(rng, 2) == 0 ? 2 : 4;
    std::vector<Response> rs;
    for (std::size_t i = 0; i < 4; ++i)
      rs.push_back(Response::make({1}, {-0.5}, i < correct, i < correct ? 1.0 : 0.0));
    return make_group(pr, std::move(rs));
  };
  double total = 0.0;
  constexpr int trials = 200;
  for (int t = 0; t < trials; ++t) {
    DatasetPromptSource src(prompts(64));
    SamplerConfig cfg;
    cfg.train_batch = bt;
    cfg.rollout_batch = br;
    cfg.group_size = 4;
    cfg.rng_seed = static_cast<std::uint64_t>(t) + 1000;
    cfg.max_rounds = 50;
    total += static_cast<double>(fill_batch(src, rollout, FilterSpec::none(), cfg, t).batch.rounds_used);
  }
  const double mean = total / trials;
  CHECK(mean == doctest::Approx(expected).epsilon(0.25));
  CHECK(expected > 2.0);
}

TEST_CASE("sampler config validation") {
  SamplerConfig c;
  CHECK(c.effective_rollout_batch() == 1536);
  c.group_size = 0;
  CHECK_THROWS(c.validate());
}
