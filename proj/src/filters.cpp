#include "lspo/filters.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace lspo {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool is_fraction(double x) { return x > 0.0 && x < 1.0; }

std::vector<double> statistics_of(std::span<const RolloutGroup> groups, FilterKey key) {
  std::vector<double> out;
  out.reserve(groups.size());
  for (const auto& g : groups) out.push_back(group_statistic(g, key));
  return out;
}

std::vector<RolloutGroup> select(std::span<const RolloutGroup> groups, const std::vector<bool>& keep) {
  std::vector<RolloutGroup> out;
  for (std::size_t i = 0; i < groups.size(); ++i)
    if (keep[i]) out.push_back(groups[i]);
  return out;
}

void apply_bands(FilterDecision& d, std::span<const double> stats) {
  d.keep.assign(stats.size(), false);
  for (std::size_t i = 0; i < stats.size(); ++i) d.keep[i] = d.admits(stats[i]);
}

FilterResult finish(std::span<const RolloutGroup> groups, FilterDecision d) {
  FilterResult r;
  r.kept = select(groups, d.keep);
  r.decision = std::move(d);
  return r;
}

void require_kind(const FilterSpec& spec, std::initializer_list<FilterKind> kinds, const char* op) {
  if (std::find(kinds.begin(), kinds.end(), spec.kind) == kinds.end())
    throw std::invalid_argument(std::string(op) + ": unsupported filter kind " +
                                std::string(to_string(spec.kind)));
}

}  // namespace

LengthDistribution::LengthDistribution(std::vector<double> values) : sorted_(std::move(values)) {
  if (sorted_.empty()) throw std::invalid_argument("empty length distribution");
  std::sort(sorted_.begin(), sorted_.end());
}

double empirical_cdf(const LengthDistribution& dist, double t) {
  const auto v = dist.sorted_values();
  const auto count = std::upper_bound(v.begin(), v.end(), t) - v.begin();
  return static_cast<double>(count) / static_cast<double>(v.size());
}

double quantile(const LengthDistribution& dist, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("quantile level must lie in (0, 1]");
  const auto v = dist.sorted_values();
  const double n = static_cast<double>(v.size());
  // Smallest index i with (i + 1) / n >= alpha. F at v[i] is at least
  // (i + 1) / n, and any strictly smaller value has F <= i / n < alpha.
  std::size_t lo = 0;
  std::size_t hi = v.size() - 1;
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (static_cast<double>(mid + 1) / n >= alpha)
      hi = mid;
    else
      lo = mid + 1;
  }
  return v[lo];
}

std::string_view to_string(FilterKind kind) {
  switch (kind) {
    case FilterKind::none: return "none";
    case FilterKind::zero_variance: return "zero_variance";
    case FilterKind::lspo_percentile: return "lspo_percentile";
    case FilterKind::keep_ranges_percentile: return "keep_ranges_percentile";
    case FilterKind::value_absolute: return "value_absolute";
    case FilterKind::value_relative: return "value_relative";
  }
  return "unknown";
}

std::string_view to_string(FilterKey key) { return key == FilterKey::length ? "length" : "accuracy"; }

FilterKind parse_filter_kind(std::string_view s) {
  for (auto k : {FilterKind::none, FilterKind::zero_variance, FilterKind::lspo_percentile,
                 FilterKind::keep_ranges_percentile, FilterKind::value_absolute, FilterKind::value_relative}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown filter kind: " + std::string(s));
}

FilterKey parse_filter_key(std::string_view s) {
  if (s == "length") return FilterKey::length;
  if (s == "accuracy") return FilterKey::accuracy;
  throw std::invalid_argument("unknown filter key: " + std::string(s));
}

void FilterSpec::validate() const {
  switch (kind) {
    case FilterKind::none:
    case FilterKind::zero_variance:
      return;
    case FilterKind::lspo_percentile:
      if (!(is_fraction(l_low) && is_fraction(l_high) && l_low <= l_high && l_high < l_max && l_max <= 1.0))
        throw std::invalid_argument("lspo filter requires 0 < l_low <= l_high < l_max <= 1");
      return;
    case FilterKind::keep_ranges_percentile: {
      if (ranges.empty()) throw std::invalid_argument("empty ranges");
      auto sorted = ranges;
      std::sort(sorted.begin(), sorted.end(), [](auto& a, auto& b) { return a.lo < b.lo; });
      for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (!(sorted[i].lo >= 0.0 && sorted[i].lo < sorted[i].hi && sorted[i].hi <= 100.0))
          throw std::invalid_argument("each range needs 0 <= lo < hi <= 100");
        if (i > 0 && !(sorted[i - 1].hi < sorted[i].lo))
          throw std::invalid_argument("ranges must be disjoint");
      }
      return;
    }
    case FilterKind::value_absolute:
      if (!(absolute_lower <= absolute_upper))
        throw std::invalid_argument("value_absolute requires lower <= upper");
      return;
    case FilterKind::value_relative:
      for (double a : {alpha, alpha_high, alpha_max})
        if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument("value_relative alphas must lie in [0, 1]");
      if (!(alpha_max <= alpha_high))
        throw std::invalid_argument("value_relative requires alpha_max <= alpha_high");
      return;
  }
}

FilterSpec FilterSpec::none() {
  FilterSpec s;
  s.kind = FilterKind::none;
  return s;
}

FilterSpec FilterSpec::lspo(double l_low, double l_high, double l_max) {
  FilterSpec s;
  s.kind = FilterKind::lspo_percentile;
  s.l_low = l_low;
  s.l_high = l_high;
  s.l_max = l_max;
  return s;
}

FilterSpec FilterSpec::keep_ranges(std::vector<PercentRange> ranges, FilterKey key) {
  FilterSpec s;
  s.kind = FilterKind::keep_ranges_percentile;
  s.ranges = std::move(ranges);
  s.key = key;
  return s;
}

FilterSpec FilterSpec::value_absolute(double lower, double upper) {
  FilterSpec s;
  s.kind = FilterKind::value_absolute;
  s.absolute_lower = lower;
  s.absolute_upper = upper;
  return s;
}

FilterSpec FilterSpec::value_relative(double alpha, double alpha_high, double alpha_max) {
  FilterSpec s;
  s.kind = FilterKind::value_relative;
  s.alpha = alpha;
  s.alpha_high = alpha_high;
  s.alpha_max = alpha_max;
  return s;
}

std::size_t FilterDecision::kept_count() const {
  return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true));
}

bool FilterDecision::admits(double statistic) const {
  if (degenerate || kind == FilterKind::none) return true;
  if (kind == FilterKind::zero_variance) return statistic > 0.0 && statistic < 1.0;
  return std::any_of(bands.begin(), bands.end(), [&](const Band& b) { return b.contains(statistic); });
}

double group_statistic(const RolloutGroup& group, FilterKey key) {
  return key == FilterKey::length ? group.avg_length() : group.accuracy();
}

FilterKey statistic_key(const FilterSpec& spec) {
  if (spec.kind == FilterKind::zero_variance) return FilterKey::accuracy;
  if (spec.kind == FilterKind::keep_ranges_percentile) return spec.key;
  return FilterKey::length;
}

std::vector<RolloutGroup> zero_variance_filter(std::span<const RolloutGroup> groups) {
  std::vector<RolloutGroup> out;
  for (const auto& g : groups)
    if (g.pass_count() > 0 && g.pass_count() < g.size()) out.push_back(g);
  return out;
}

FilterDecision decide_on_values(std::span<const double> stats, const FilterSpec& spec) {
  spec.validate();
  FilterDecision d;
  d.kind = spec.kind;
  d.key = statistic_key(spec);

  const bool needs_distribution = spec.kind == FilterKind::lspo_percentile ||
                                  spec.kind == FilterKind::keep_ranges_percentile ||
                                  spec.kind == FilterKind::value_relative;
  if (needs_distribution && stats.size() < 2) {
    d.degenerate = true;
    d.keep.assign(stats.size(), true);
    return d;
  }

  switch (spec.kind) {
    case FilterKind::none:
    case FilterKind::zero_variance:
      break;
    case FilterKind::lspo_percentile: {
      const LengthDistribution dist({stats.begin(), stats.end()});
      const double q_low = quantile(dist, spec.l_low);
      const double q_high = quantile(dist, spec.l_high);
      const double q_max = quantile(dist, spec.l_max);
      d.thresholds = {{"q_low", q_low}, {"q_high", q_high}, {"q_max", q_max}};
      d.bands = {Band{-kInf, q_low}, Band{q_high, q_max}};
      break;
    }
    case FilterKind::keep_ranges_percentile: {
      const LengthDistribution dist({stats.begin(), stats.end()});
      for (const auto& r : spec.ranges) {
        Band b;
        if (r.lo > 0.0) b.lo = quantile(dist, r.lo / 100.0);
        if (r.hi < 100.0) b.hi = quantile(dist, r.hi / 100.0);
        d.bands.push_back(b);
      }
      break;
    }
    case FilterKind::value_absolute:
      d.thresholds = {{"lower", spec.absolute_lower}, {"upper", spec.absolute_upper}};
      d.bands = {Band{-kInf, spec.absolute_lower}, Band{spec.absolute_upper, kInf}};
      break;
    case FilterKind::value_relative: {
      const auto [mn, mx] = std::minmax_element(stats.begin(), stats.end());
      const double l_min = *mn;
      const double l_max = *mx;
      auto edge = [&](double a) { return a * l_min + (1.0 - a) * l_max; };
      const double t_low = edge(spec.alpha);
      const double t_high = edge(spec.alpha_high);
      const double t_cap = edge(spec.alpha_max);
      d.thresholds = {{"l_min", l_min}, {"l_max", l_max}, {"t_low", t_low}, {"t_high", t_high}, {"t_max", t_cap}};
      d.bands = {Band{-kInf, t_low}, Band{t_high, t_cap}};
      break;
    }
  }
  apply_bands(d, stats);
  return d;
}

FilterDecision decide(std::span<const RolloutGroup> groups, const FilterSpec& spec) {
  if (spec.kind == FilterKind::zero_variance) {
    FilterDecision d;
    d.kind = FilterKind::zero_variance;
    d.key = FilterKey::accuracy;
    for (const auto& g : groups) d.keep.push_back(g.pass_count() > 0 && g.pass_count() < g.size());
    return d;
  }
  const auto stats = statistics_of(groups, statistic_key(spec));
  return decide_on_values(stats, spec);
}

FilterResult apply_filter(std::span<const RolloutGroup> groups, const FilterSpec& spec) {
  return finish(groups, decide(groups, spec));
}

FilterResult lspo_filter(std::span<const RolloutGroup> groups, const FilterSpec& spec) {
  require_kind(spec, {FilterKind::lspo_percentile}, "lspo_filter");
  return apply_filter(groups, spec);
}

FilterResult keep_ranges_filter(std::span<const RolloutGroup> groups, const FilterSpec& spec) {
  require_kind(spec, {FilterKind::keep_ranges_percentile}, "keep_ranges_filter");
  return apply_filter(groups, spec);
}

FilterResult value_filter(std::span<const RolloutGroup> groups, const FilterSpec& spec) {
  require_kind(spec, {FilterKind::value_absolute, FilterKind::value_relative}, "value_filter");
  return apply_filter(groups, spec);
}

ChainResult run_filter_chain(std::span<const RolloutGroup> groups, const FilterSpec& length_spec) {
  ChainResult r;
  r.accuracy_survivors = zero_variance_filter(groups);
  r.length_decision = decide(r.accuracy_survivors, length_spec);
  r.kept = select(r.accuracy_survivors, r.length_decision.keep);
  return r;
}

}  // namespace lspo
