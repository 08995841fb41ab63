#pragma once

/**
 * JSONL run log.
 *
 * One JSON object per line, discriminated by "type":
 *
 *   config      {"ini": <rendered config>}
 *   round       {"step","round","sampled":[id],"survivors":[[id,avg_length,pass_count,G]],
 *                "filter":{"kind","key","degenerate","bands":[[lo,hi]],"thresholds":{}},
 *                "kept":[id]}
 *   update      {"step","mini_batch","objective","clip_fraction","mean_ratio","grad_norm"}
 *   group       {"step","round", <group record fields>}
 *   step        {"step", metrics..., "batch":[[round,id]], "eval_avg_at_k"?}
 *   starvation  {"step","pool_size","target_size","rounds_used","prompts_sampled"}
 *   summary     {"final_avg_at_k","checkpoints_used","checkpoint_fallback","starved","steps"}
 *
 * Unbounded band ends are written as null. Objectives use the maximization
 * convention (higher is better).
 */

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "lspo/batch_builder.hpp"
#include "lspo/experiment.hpp"
#include "lspo/policy_optim.hpp"

namespace lspo {

nlohmann::json config_record(const ExperimentConfig& cfg);
nlohmann::json round_record(const RoundRecord& round);
nlohmann::json update_record(std::size_t step, std::size_t index, const MiniBatchStats& stats);
nlohmann::json group_record(std::size_t step, std::size_t round, const RolloutGroup& group);
nlohmann::json step_record(const StepRow& row, const TrainingBatch* batch, bool include_timing);
nlohmann::json starvation_record(std::size_t step, const PoolStats& stats, const std::string& message);
nlohmann::json summary_record(const RunRecord& record);

nlohmann::json decision_to_json(const FilterDecision& d);
FilterDecision decision_from_json(const nlohmann::json& j);
StepRow step_row_from_json(const nlohmann::json& j);

void write_line(std::ostream& out, const nlohmann::json& record);

/// Rebuilds a RunRecord (config, step rows, summary) from a log stream.
RunRecord load_run_record(std::istream& in);
RunRecord load_run_record_file(const std::string& path);

struct AuditReport {
  std::size_t rounds_checked = 0;
  std::size_t groups_checked = 0;
  std::size_t batch_entries_checked = 0;
  std::vector<std::string> failures;

  bool ok() const { return failures.empty(); }
};

/// Offline replay: recomputes every round's filter thresholds from the
/// logged survivors, re-checks every keep/drop decision against them, and
/// checks that each training batch holds exactly train_batch groups that
/// were kept in their own round.
AuditReport audit_log(std::istream& in);
AuditReport audit_log_file(const std::string& path);

}  // namespace lspo
