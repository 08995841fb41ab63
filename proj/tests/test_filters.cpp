#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "lspo/filters.hpp"
#include "lspo/rng.hpp"
#include "test_helpers.hpp"

using namespace lspo;
using lspo::testing::groups_with_avg_lengths;
using lspo::testing::ids_of;
using lspo::testing::uniform_group;

namespace {

std::vector<double> tens() {
  std::vector<double> v;
  for (int i = 1; i <= 10; ++i) v.push_back(10.0 * i);
  return v;
}

// Linear scan over the sample; independent of the binary search.
double brute_quantile(std::vector<double> v, double alpha) {
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  for (double t : v) {
    double count = 0;
    for (double u : v) count += u <= t;
    if (count / n >= alpha) return t;
  }
  return v.back();
}

std::vector<double> kept_values(const std::vector<double>& values, const FilterDecision& d) {
  std::vector<double> out;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (d.keep[i]) out.push_back(values[i]);
  return out;
}

std::vector<double> random_values(Rng& rng, std::size_t n, int max) {
  std::vector<double> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back(1.0 + static_cast<double>(uniform_below(rng, max)));
  return v;
}

}  // namespace

TEST_CASE("empirical cdf and quantile") {
  const LengthDistribution d(tens());
  CHECK(empirical_cdf(d, 30) == doctest::Approx(0.3));
  CHECK(empirical_cdf(d, 35) == doctest::Approx(0.3));
  CHECK(empirical_cdf(d, 5) == 0.0);
  CHECK(empirical_cdf(d, 1000) == 1.0);
  CHECK(quantile(d, 0.3) == 30);
  CHECK(quantile(d, 0.65) == 70);
  CHECK(quantile(d, 0.95) == 100);
  CHECK(quantile(d, 1.0) == 100);
  CHECK(quantile(d, 0.01) == 10);
  CHECK_THROWS_AS(quantile(d, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(quantile(d, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(LengthDistribution({}), std::invalid_argument);
}

TEST_CASE("property: quantile matches a linear scan and is a Galois inverse") {
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const auto v = random_values(rng, 1 + uniform_below(rng, 60), 30);
    const LengthDistribution d(v);
    for (double a : {0.01, 0.1, 0.25, 0.3, 0.5, 0.65, 0.95, 1.0}) {
      const double q = quantile(d, a);
      CHECK(q == brute_quantile(v, a));
      for (double t : v) CHECK((empirical_cdf(d, t) >= a) == (q <= t));
    }
  }
}

TEST_CASE("lspo filter keeps short and long-but-not-extreme groups") {
  const auto groups = groups_with_avg_lengths(tens());
  const auto res = lspo_filter(groups, FilterSpec::lspo());
  std::vector<double> kept;
  for (const auto& g : res.kept) kept.push_back(g.avg_length());
  CHECK(kept == std::vector<double>{10, 20, 30, 70, 80, 90, 100});
  REQUIRE(res.decision.thresholds.size() == 3);
  CHECK(res.decision.thresholds[0].second == 30);
  CHECK(res.decision.thresholds[1].second == 70);
  CHECK(res.decision.thresholds[2].second == 100);
}

TEST_CASE("lspo filter drops the extreme tail") {
  std::vector<double> v;
  for (int i = 1; i <= 20; ++i) v.push_back(i);
  const auto d = decide_on_values(v, FilterSpec::lspo());
  CHECK(kept_values(v, d) == std::vector<double>{1, 2, 3, 4, 5, 6, 13, 14, 15, 16, 17, 18, 19});
}

TEST_CASE("lspo spec validation") {
  CHECK_THROWS_AS(FilterSpec::lspo(0.7, 0.65, 0.95).validate(), std::invalid_argument);
  CHECK_THROWS_AS(FilterSpec::lspo(0.0, 0.65, 0.95).validate(), std::invalid_argument);
  CHECK_THROWS_AS(FilterSpec::lspo(0.3, 0.95, 0.95).validate(), std::invalid_argument);
  CHECK_THROWS_AS(FilterSpec::lspo(0.3, 0.65, 1.2).validate(), std::invalid_argument);
  CHECK_NOTHROW(FilterSpec::lspo(0.5, 0.5, 1.0).validate());
}

TEST_CASE("lspo with l_low == l_high and l_max == 1 keeps everything") {
  const auto v = tens();
  const auto d = decide_on_values(v, FilterSpec::lspo(0.5, 0.5, 1.0));
  CHECK(d.kept_count() == v.size());
}

TEST_CASE("keep ranges examples") {
  std::vector<double> v;
  for (int i = 1; i <= 100; ++i) v.push_back(i);
  auto d = decide_on_values(v, FilterSpec::keep_ranges({{0, 60}}));
  CHECK(d.kept_count() == 60);
  CHECK(kept_values(v, d).back() == 60);
  d = decide_on_values(v, FilterSpec::keep_ranges({{20, 80}}));
  CHECK(d.kept_count() == 61);
  CHECK(kept_values(v, d).front() == 20);
  d = decide_on_values(v, FilterSpec::keep_ranges({{40, 100}}));
  CHECK(d.kept_count() == 61);
  CHECK(kept_values(v, d).back() == 100);
  d = decide_on_values(v, FilterSpec::keep_ranges({{0, 30}, {60, 90}}));
  CHECK(d.kept_count() == 30 + 31);
  CHECK(d.bands.size() == 2);
}

TEST_CASE("property: keep ranges 0-30,65-95 equals lspo defaults") {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const auto v = random_values(rng, 2 + uniform_below(rng, 80), 500);
    const auto a = decide_on_values(v, FilterSpec::lspo());
    const auto b = decide_on_values(v, FilterSpec::keep_ranges({{0, 30}, {65, 95}}));
    CHECK(a.keep == b.keep);
  }
}

TEST_CASE("keep ranges on accuracy") {
  std::vector<RolloutGroup> groups;
  for (std::size_t c = 1; c <= 7; ++c) groups.push_back(uniform_group(c, 8, 10, c));
  const auto res = keep_ranges_filter(groups, FilterSpec::keep_ranges({{0, 30}}, FilterKey::accuracy));
  CHECK(res.decision.key == FilterKey::accuracy);
  CHECK(ids_of(res.kept) == std::vector<PromptId>{1, 2, 3});
}

TEST_CASE("value filters") {
  const auto v = tens();
  auto d = decide_on_values(v, FilterSpec::value_absolute(25, 75));
  CHECK(kept_values(v, d) == std::vector<double>{10, 20, 80, 90, 100});
  // T(a) = 10a + 100(1-a): T(0.7) = 37, T(0.35) = 68.5, T(0.05) = 95.5
  d = decide_on_values(v, FilterSpec::value_relative(0.7, 0.35, 0.05));
  CHECK(kept_values(v, d) == std::vector<double>{10, 20, 30, 70, 80, 90});
  REQUIRE(d.bands.size() == 2);
  CHECK(d.bands[0].hi == doctest::Approx(37));
  CHECK(d.bands[1].lo == doctest::Approx(68.5));
  CHECK(d.bands[1].hi == doctest::Approx(95.5));
}

TEST_CASE("property: value_relative is scale invariant") {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const auto v = random_values(rng, 2 + uniform_below(rng, 50), 1000);
    std::vector<double> scaled;
    for (double x : v) scaled.push_back(x * 8.0);
    const auto spec = FilterSpec::value_relative(0.7, 0.35, 0.05);
    CHECK(decide_on_values(v, spec).keep == decide_on_values(scaled, spec).keep);
  }
}

TEST_CASE("property: lspo retention tracks the kept quantile mass") {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v;
    const std::size_t n = 100 + uniform_below(rng, 400);
    for (std::size_t i = 0; i < n; ++i) v.push_back(uniform01(rng) * 1000.0);
    const auto d = decide_on_values(v, FilterSpec::lspo());
    const double frac = static_cast<double>(d.kept_count()) / static_cast<double>(n);
    CHECK(std::abs(frac - 0.60) <= 3.0 / static_cast<double>(n));
  }
}

TEST_CASE("property: every filter returns an order-preserving subsequence") {
  Rng rng(13);
  const std::vector<FilterSpec> specs{FilterSpec::none(), FilterSpec::lspo(),
                                      FilterSpec::keep_ranges({{0, 30}, {60, 90}}),
                                      FilterSpec::value_absolute(50, 120),
                                      FilterSpec::value_relative(0.7, 0.35, 0.05)};
  for (int trial = 0; trial < 50; ++trial) {
    const auto v = random_values(rng, 1 + uniform_below(rng, 30), 200);
    const auto groups = groups_with_avg_lengths(v);
    for (const auto& spec : specs) {
      const auto res = apply_filter(groups, spec);
      const auto ids = ids_of(res.kept);
      CHECK(std::is_sorted(ids.begin(), ids.end()));
      CHECK(ids.size() == res.decision.kept_count());
      for (std::size_t i = 0; i < groups.size(); ++i)
        CHECK(res.decision.keep[i] == res.decision.admits(v[i]));
    }
  }
}

TEST_CASE("degenerate rounds pass through") {
  const auto one = groups_with_avg_lengths({42});
  const auto res = lspo_filter(one, FilterSpec::lspo());
  CHECK(res.kept.size() == 1);
  CHECK(res.decision.degenerate);
  const auto d = decide_on_values(std::vector<double>{}, FilterSpec::lspo());
  CHECK(d.kept_count() == 0);
}

TEST_CASE("zero variance filter") {
  std::vector<RolloutGroup> groups{uniform_group(0, 8, 5, 0), uniform_group(1, 8, 5, 3), uniform_group(2, 8, 5, 8),
                                   uniform_group(3, 8, 5, 7)};
  CHECK(ids_of(zero_variance_filter(groups)) == std::vector<PromptId>{1, 3});
  const auto d = decide(groups, FilterSpec{.kind = FilterKind::zero_variance});
  CHECK(d.keep == std::vector<bool>{false, true, false, true});
}

TEST_CASE("property: zero variance keeps exactly the mixed groups") {
  Rng rng(1);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t g = 1 + uniform_below(rng, 16);
    const std::size_t c = uniform_below(rng, g + 1);
    const auto group = uniform_group(trial, g, 4, c);
    const bool kept = zero_variance_filter(std::span<const RolloutGroup>(&group, 1)).size() == 1;
    CHECK(kept == (c > 0 && c < g));
  }
}

TEST_CASE("filter chain builds the length distribution from survivors") {
  std::vector<RolloutGroup> groups;
  for (int i = 1; i <= 10; ++i) groups.push_back(uniform_group(i, 8, 10.0 * i, 3));
  groups.push_back(uniform_group(100, 8, 1000, 0));
  groups.push_back(uniform_group(101, 8, 1, 8));
  const auto chain = run_filter_chain(groups, FilterSpec::lspo());
  CHECK(chain.accuracy_survivors.size() == 10);
  CHECK(ids_of(chain.kept) == std::vector<PromptId>{1, 2, 3, 7, 8, 9, 10});
}

TEST_CASE("kind and key names round trip") {
  for (auto k : {FilterKind::none, FilterKind::zero_variance, FilterKind::lspo_percentile,
                 FilterKind::keep_ranges_percentile, FilterKind::value_absolute, FilterKind::value_relative})
    CHECK(parse_filter_kind(to_string(k)) == k);
  for (auto k : {FilterKey::length, FilterKey::accuracy}) CHECK(parse_filter_key(to_string(k)) == k);
  CHECK_THROWS(parse_filter_kind("bogus"));
}
