#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "lspo/policy_optim.hpp"
#include "lspo/rng.hpp"
#include "lspo/toy_lab.hpp"

using namespace lspo;

namespace {

TokenSequence seq(std::size_t len, double adv, double old_lp = -1.0, double new_lp = -1.0) {
  TokenSequence s;
  s.logprob_old.assign(len, old_lp);
  s.logprob_new.assign(len, new_lp);
  s.logprob_ref.assign(len, old_lp);
  s.advantage = adv;
  return s;
}

SurrogateLossConfig grpo_cfg(double beta = 0.0) {
  SurrogateLossConfig c;
  c.algorithm = Algorithm::grpo;
  c.beta = beta;
  return c;
}

SurrogateLossConfig dapo_cfg() {
  SurrogateLossConfig c;
  c.algorithm = Algorithm::dapo;
  return c;
}

}  // namespace

TEST_CASE("group advantages") {
  auto a = group_advantages(std::vector<double>{1, 0, 0, 1}, 1e-6);
  for (std::size_t i = 0; i < 4; ++i) CHECK(a[i] == doctest::Approx(i % 3 == 0 ? 1.0 : -1.0).epsilon(1e-5));
  a = group_advantages(std::vector<double>{1, 1, 1, 1}, 1e-6);
  CHECK(a == std::vector<double>(4, 0.0));
  a = group_advantages(std::vector<double>{2, 0}, 1e-6);
  CHECK(a[0] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(a[1] == doctest::Approx(-1.0).epsilon(1e-5));
}

TEST_CASE("property: advantages are centred with std shrunk by eps") {
  Rng rng(8);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> r(8);
    for (auto& x : r) x = uniform01(rng) * 4.0 - 2.0;
    double m = 0, v = 0;
    for (double x : r) m += x;
    m /= 8;
    for (double x : r) v += (x - m) * (x - m);
    const double sd = std::sqrt(v / 8);
    const auto a = group_advantages(r, 1e-6);
    double am = 0, av = 0;
    for (double x : a) am += x;
    am /= 8;
    for (double x : a) av += (x - am) * (x - am);
    CHECK(std::abs(am) < 1e-9);
    CHECK(std::abs(std::sqrt(av / 8) - sd / (sd + 1e-6)) < 1e-9);
  }
}

TEST_CASE("token ratio") {
  CHECK(token_ratio(-1.3, -1.3) == 1.0);
  CHECK(token_ratio(-1.0 + std::log(2.0), -1.0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(token_ratio(-1.0 - std::log(4.0), -1.0) == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("clipped term") {
  CHECK(clipped_term(1.5, 1.0, 0.8, 1.2) == doctest::Approx(1.2));
  CHECK(clipped_term(0.5, -1.0, 0.8, 1.2) == doctest::Approx(-0.8));
  for (double adv : {-3.0, -0.5, 0.0, 0.7, 2.0}) CHECK(clipped_term(1.0, adv, 0.8, 1.2) == adv);
}

TEST_CASE("kl penalty") {
  CHECK(kl_penalty(-2.0, -2.0) == 0.0);
  CHECK(kl_penalty(-2.0, -2.0 + std::log(2.0)) == doctest::Approx(1.0 - std::log(2.0)));
  CHECK(kl_penalty(-2.0, -2.0 - std::log(2.0)) == doctest::Approx(std::log(2.0) - 0.5));
  Rng rng(2);
  for (int i = 0; i < 10000; ++i) CHECK(kl_penalty(uniform01(rng) * -20, uniform01(rng) * -20) >= 0.0);
}

TEST_CASE("grpo objective examples") {
  TokenBatch b{{seq(2, 1.0), seq(2, -1.0)}};
  CHECK(grpo_objective(b, grpo_cfg()) == 0.0);
  b = TokenBatch{{seq(1, 1.0)}};
  CHECK(grpo_objective(b, grpo_cfg()) == 1.0);
  b = TokenBatch{{seq(1, 1.0), seq(3, 1.0)}};
  CHECK(grpo_objective(b, grpo_cfg()) == 1.0);
}

TEST_CASE("dapo objective examples") {
  TokenBatch b{{seq(1, 1.0), seq(3, 1.0)}};
  CHECK(dapo_objective(b, dapo_cfg()) == 1.0);
  b = TokenBatch{{seq(1, 1.0), seq(3, -1.0)}};
  CHECK(dapo_objective(b, dapo_cfg()) == -0.5);
  CHECK(grpo_objective(b, grpo_cfg()) == 0.0);
  const double lr13 = std::log(1.3);
  b = TokenBatch{{seq(2, 1.0, -1.0, -1.0 + lr13), seq(3, 1.0, -1.0, -1.0 + lr13)}};
  CHECK(dapo_objective(b, dapo_cfg()) == doctest::Approx(1.28).epsilon(1e-12));
}

TEST_CASE("on-policy evaluation never clips") {
  TokenBatch b{{seq(3, 0.4), seq(5, -0.9), seq(2, 1.5)}};
  for (const auto& cfg : {grpo_cfg(), dapo_cfg()}) {
    const auto ev = make_objective(cfg)->evaluate(b, true);
    CHECK(ev.clipped_tokens == 0);
    CHECK(ev.mean_ratio == 1.0);
  }
  CHECK(grpo_objective(b, grpo_cfg()) == doctest::Approx((0.4 - 0.9 + 1.5) / 3));
  CHECK(dapo_objective(b, dapo_cfg()) == doctest::Approx((3 * 0.4 - 5 * 0.9 + 2 * 1.5) / 10));
}

TEST_CASE("gspo has no built-in objective") {
  SurrogateLossConfig c;
  c.algorithm = Algorithm::gspo;
  CHECK_THROWS_AS(make_objective(c), std::invalid_argument);
}

TEST_CASE("token batch validation") {
  TokenBatch b{{seq(2, 1.0)}};
  b.responses[0].logprob_new.pop_back();
  CHECK_THROWS_AS(b.validate(false), std::invalid_argument);
  b = TokenBatch{{seq(2, 1.0)}};
  b.responses[0].logprob_ref.clear();
  CHECK_NOTHROW(b.validate(false));
  CHECK_THROWS_AS(b.validate(true), std::invalid_argument);
}

TEST_CASE("property: objectives are invariant to response order") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    TokenBatch b;
    const std::size_t n = 2 + uniform_below(rng, 8);
    for (std::size_t i = 0; i < n; ++i) {
      TokenSequence s;
      const std::size_t len = 1 + uniform_below(rng, 12);
      for (std::size_t t = 0; t < len; ++t) {
        s.logprob_old.push_back(-uniform01(rng) * 3);
        s.logprob_new.push_back(-uniform01(rng) * 3);
        s.logprob_ref.push_back(-uniform01(rng) * 3);
      }
      s.advantage = uniform01(rng) * 2 - 1;
      b.responses.push_back(s);
    }
    const double g = grpo_objective(b, grpo_cfg(0.05));
    const double d = dapo_objective(b, dapo_cfg());
    std::shuffle(b.responses.begin(), b.responses.end(), rng);
    CHECK(grpo_objective(b, grpo_cfg(0.05)) == doctest::Approx(g).epsilon(1e-12));
    CHECK(dapo_objective(b, dapo_cfg()) == doctest::Approx(d).epsilon(1e-12));
  }
}

TEST_CASE("pairwise sum is exact on small integers") {
  std::vector<double> v;
  for (int i = 1; i <= 1000; ++i) v.push_back(i);
  CHECK(pairwise_sum(v) == 500500.0);
  CHECK(pairwise_sum(std::vector<double>{}) == 0.0);
}

namespace {

ToyTaskConfig tiny_task() {
  ToyTaskConfig c;
  c.num_answers = 3;
  c.max_len = 8;
  c.train_size = 16;
  c.eval_size = 4;
  c.seed = 5;
  return c;
}

TrainingBatch toy_batch(const TinyPolicy& policy, const ToyTask& task, std::size_t groups, std::size_t g) {
  TrainingBatch batch;
  RewardConfig reward;
  reward.max_limit = 6;
  reward.cache = 2;
  for (std::size_t i = 0; i < groups; ++i)
    batch.groups.push_back(toy_rollout(policy, task, task.train_set()[i % task.train_set().size()], {0, i}, g, 7, reward));
  batch.target_size = groups;
  return batch;
}

}  // namespace

TEST_CASE("zero advantage step leaves parameters unchanged") {
  const ToyTask task(tiny_task());
  auto policy = TinyPolicy::random_init(task.vocab_size(), 2, 0.5, 3);
  TrainingBatch batch;
  for (int i = 0; i < 2; ++i) {
    std::vector<Response> rs;
    for (int j = 0; j < 4; ++j) {
      const auto r = sample_response(policy, task, task.train_set()[i], mix_seed({1, std::uint64_t(i), std::uint64_t(j)}), {});
      rs.push_back(r.with_reward(0.5));
    }
    batch.groups.push_back(make_group(task.train_set()[i], rs));
  }
  const std::vector<double> before(policy.parameters().begin(), policy.parameters().end());
  OptimizerConfig o;
  o.lr = 1.0;
  PolicyUpdater up(grpo_cfg(), o);
  up.update_step(policy, nullptr, batch);
  CHECK(std::equal(before.begin(), before.end(), policy.parameters().begin()));
}

TEST_CASE("positive advantage raises the chosen logit") {
  TinyPolicy policy(4, 1);
  std::vector<Token> ctx{0};
  std::vector<Response> rs;
  rs.push_back(Response::make({2}, {std::log(0.25)}, true, 1.0));
  rs.push_back(Response::make({3}, {std::log(0.25)}, false, 0.0));
  TrainingBatch batch;
  Prompt p;
  p.id = 0;
  p.payload = ctx;
  p.reference_answer = {2};
  batch.groups.push_back(make_group(p, rs));
  const double before = policy.logits(ctx)[2];
  OptimizerConfig o;
  o.lr = 0.1;
  PolicyUpdater up(grpo_cfg(), o);
  up.update_step(policy, nullptr, batch);
  CHECK(policy.logits(ctx)[2] > before);
  CHECK(policy.logits(ctx)[3] < policy.logits(ctx)[2]);
}

TEST_CASE("mini-batch count") {
  const ToyTask task(tiny_task());
  auto policy = TinyPolicy::random_init(task.vocab_size(), 2, 0.5, 3);
  const auto batch = toy_batch(policy, task, 512, 2);
  OptimizerConfig o;
  o.lr = 1e-6;
  o.mini_batch = 32;
  PolicyUpdater up(grpo_cfg(), o);
  CHECK(up.update_step(policy, nullptr, batch).mini_batches.size() == 16);
}

TEST_CASE("analytic gradient matches finite differences") {
  const ToyTask task(tiny_task());
  auto policy = TinyPolicy::random_init(task.vocab_size(), 2, 0.5, 11);
  const auto reference = TinyPolicy::random_init(task.vocab_size(), 2, 0.5, 12);
  auto batch = toy_batch(policy, task, 2, 8);
  // move off-policy so that some tokens clip
  auto shifted = TinyPolicy::random_init(task.vocab_size(), 2, 0.5, 11);
  for (std::size_t i = 0; i < shifted.num_parameters(); ++i) shifted.parameters()[i] += 0.05 * std::sin(double(i));
  for (const auto& cfg : {grpo_cfg(0.04), dapo_cfg()}) {
    const auto obj = make_objective(cfg);
    const auto analytic = objective_gradient(*obj, batch.groups, shifted, &reference, cfg.advantage_eps);
    auto probe = shifted;
    auto f = [&](std::span<const double> x) {
      std::copy(x.begin(), x.end(), probe.parameters().begin());
      return obj->evaluate(build_token_batch(batch.groups, probe, &reference, cfg.advantage_eps), false).value;
    };
    const std::vector<double> x0(shifted.parameters().begin(), shifted.parameters().end());
    const auto fd = finite_difference_grad(f, x0);
    double worst = 0.0;
    for (std::size_t i = 0; i < fd.size(); ++i)
      worst = std::max(worst, std::abs(analytic[i] - fd[i]) / std::max(1e-6, std::abs(fd[i]) + std::abs(analytic[i])));
    CHECK(worst < 1e-4);
  }
}
