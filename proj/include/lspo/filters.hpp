#pragma once

/**
 * Per-round prompt filters.
 *
 * Every percentile or value filter reduces to the same shape: compute a set
 * of closed bands on a per-group statistic (average length or accuracy)
 * from the current round's groups, then keep a group iff its statistic
 * falls inside any band. The bands are returned alongside the keep mask so
 * that a run log can be audited offline.
 *
 * Quantiles follow the left-continuous inverse of the empirical CDF:
 * Q(a) = smallest observed t with F(t) >= a.
 */

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lspo/core_model.hpp"

namespace lspo {

class LengthDistribution {
 public:
  /// Throws std::invalid_argument on an empty sample.
  explicit LengthDistribution(std::vector<double> values);

  std::span<const double> sorted_values() const { return sorted_; }
  std::size_t size() const { return sorted_.size(); }
  double min() const { return sorted_.front(); }
  double max() const { return sorted_.back(); }

 private:
  std::vector<double> sorted_;
};

/// Fraction of values <= t.
double empirical_cdf(const LengthDistribution& dist, double t);

/// Smallest observed value t with empirical_cdf(t) >= alpha. alpha must lie
/// in (0, 1]; alpha == 1 yields the maximum.
double quantile(const LengthDistribution& dist, double alpha);

enum class FilterKind {
  none,
  zero_variance,
  lspo_percentile,
  keep_ranges_percentile,
  value_absolute,
  value_relative,
};

enum class FilterKey { length, accuracy };

std::string_view to_string(FilterKind kind);
std::string_view to_string(FilterKey key);
FilterKind parse_filter_kind(std::string_view s);
FilterKey parse_filter_key(std::string_view s);

/// Percentile range in [0, 100].
struct PercentRange {
  double lo = 0.0;
  double hi = 100.0;
  bool operator==(const PercentRange&) const = default;
};

struct FilterSpec {
  FilterKind kind = FilterKind::lspo_percentile;

  // lspo_percentile
  double l_low = 0.3;
  double l_high = 0.65;
  double l_max = 0.95;

  // keep_ranges_percentile
  std::vector<PercentRange> ranges;
  FilterKey key = FilterKey::length;

  // value_relative: each edge is T(a) = a * L_min + (1 - a) * L_max
  double alpha = 0.7;        // lower band: L <= T(alpha)
  double alpha_high = 0.35;  // upper band start: L >= T(alpha_high)
  double alpha_max = 0.05;   // upper band cap: L <= T(alpha_max)

  // value_absolute, tokens
  double absolute_lower = 0.0;
  double absolute_upper = 0.0;

  void validate() const;
  bool operator==(const FilterSpec&) const = default;

  static FilterSpec none();
  static FilterSpec lspo(double l_low = 0.3, double l_high = 0.65, double l_max = 0.95);
  static FilterSpec keep_ranges(std::vector<PercentRange> ranges, FilterKey key = FilterKey::length);
  static FilterSpec value_absolute(double lower, double upper);
  static FilterSpec value_relative(double alpha, double alpha_high, double alpha_max);
};

/// Closed interval; infinite ends mean unbounded.
struct Band {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  bool contains(double x) const { return lo <= x && x <= hi; }
  bool operator==(const Band&) const = default;
};

struct FilterDecision {
  FilterKind kind = FilterKind::none;
  FilterKey key = FilterKey::length;
  std::vector<Band> bands;
  /// Named thresholds computed this round (e.g. q_low/q_high/q_max).
  std::vector<std::pair<std::string, double>> thresholds;
  /// Set when the round had too few groups to build a distribution; every
  /// group is passed through.
  bool degenerate = false;
  std::vector<bool> keep;

  std::size_t kept_count() const;
  /// Re-evaluates the keep predicate for a statistic value against the
  /// stored bands (zero_variance uses the accuracy bounds instead).
  bool admits(double statistic) const;
};

struct FilterResult {
  std::vector<RolloutGroup> kept;
  FilterDecision decision;
};

double group_statistic(const RolloutGroup& group, FilterKey key);

/// Which per-group statistic a spec filters on.
FilterKey statistic_key(const FilterSpec& spec);

/// Keeps groups with 0 < pass_count < G, preserving order.
std::vector<RolloutGroup> zero_variance_filter(std::span<const RolloutGroup> groups);

/// Computes the keep decision for any filter kind without copying groups.
FilterDecision decide(std::span<const RolloutGroup> groups, const FilterSpec& spec);

/// Same as decide() for an explicit statistic vector.
FilterDecision decide_on_values(std::span<const double> statistics, const FilterSpec& spec);

FilterResult apply_filter(std::span<const RolloutGroup> groups, const FilterSpec& spec);

/// Keeps L <= Q(l_low), or Q(l_high) <= L <= Q(l_max).
FilterResult lspo_filter(std::span<const RolloutGroup> groups, const FilterSpec& spec);

/// Keeps x with Q(lo/100) <= x <= Q(hi/100) for some range; 0 and 100 are
/// unbounded ends.
FilterResult keep_ranges_filter(std::span<const RolloutGroup> groups, const FilterSpec& spec);

/// value_absolute or value_relative.
FilterResult value_filter(std::span<const RolloutGroup> groups, const FilterSpec& spec);

struct ChainResult {
  std::vector<RolloutGroup> accuracy_survivors;
  FilterDecision length_decision;
  std::vector<RolloutGroup> kept;
};

/// Zero-variance filter followed by `length_spec`, whose distribution is
/// built from the accuracy survivors only.
ChainResult run_filter_chain(std::span<const RolloutGroup> groups, const FilterSpec& length_spec);

}  // namespace lspo
