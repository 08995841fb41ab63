#include "lspo/run_log.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <stdexcept>
#include <tuple>

#include <fmt/format.h>

namespace lspo {
namespace {

using nlohmann::json;

constexpr double kInf = std::numeric_limits<double>::infinity();

json bound_to_json(double v) { return std::isinf(v) ? json(nullptr) : json(v); }

double bound_from_json(const json& j, double if_null) { return j.is_null() ? if_null : j.get<double>(); }

json thresholds_to_json(const std::vector<std::pair<std::string, double>>& t) {
  json out = json::object();
  for (const auto& [k, v] : t) out[k] = v;
  return out;
}

// nlohmann objects iterate in key order, so keep the logged names in a
// separate ordered array.
json threshold_names(const std::vector<std::pair<std::string, double>>& t) {
  json names = json::array();
  for (const auto& [k, v] : t) names.push_back(k);
  return names;
}

std::vector<std::pair<std::string, double>> thresholds_from_json(const json& values, const json& names) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& n : names) out.emplace_back(n.get<std::string>(), values.at(n.get<std::string>()).get<double>());
  return out;
}

}  // namespace

nlohmann::json config_record(const ExperimentConfig& cfg) {
  return json{{"type", "config"}, {"ini", render_config(cfg)}};
}

nlohmann::json decision_to_json(const FilterDecision& d) {
  json bands = json::array();
  for (const auto& b : d.bands) bands.push_back(json::array({bound_to_json(b.lo), bound_to_json(b.hi)}));
  return json{{"kind", to_string(d.kind)},
              {"key", to_string(d.key)},
              {"degenerate", d.degenerate},
              {"bands", bands},
              {"thresholds", thresholds_to_json(d.thresholds)},
              {"threshold_names", threshold_names(d.thresholds)}};
}

FilterDecision decision_from_json(const nlohmann::json& j) {
  FilterDecision d;
  d.kind = parse_filter_kind(j.at("kind").get<std::string>());
  d.key = parse_filter_key(j.at("key").get<std::string>());
  d.degenerate = j.at("degenerate").get<bool>();
  for (const auto& b : j.at("bands")) d.bands.push_back(Band{bound_from_json(b.at(0), -kInf), bound_from_json(b.at(1), kInf)});
  d.thresholds = thresholds_from_json(j.at("thresholds"), j.at("threshold_names"));
  return d;
}

nlohmann::json round_record(const RoundRecord& r) {
  json survivors = json::array();
  for (const auto& s : r.accuracy_survivors)
    survivors.push_back(json::array({s.prompt_id, s.avg_length, s.pass_count, s.group_size}));
  return json{{"type", "round"},      {"step", r.step},           {"round", r.round},
              {"sampled", r.sampled_ids}, {"survivors", survivors}, {"filter", decision_to_json(r.length_decision)},
              {"kept", r.kept_ids}};
}

nlohmann::json update_record(std::size_t step, std::size_t index, const MiniBatchStats& s) {
  return json{{"type", "update"},           {"step", step},
              {"mini_batch", index},        {"objective", s.objective},
              {"clip_fraction", s.clip_fraction}, {"mean_ratio", s.mean_ratio},
              {"grad_norm", s.grad_norm},   {"groups", s.groups},
              {"tokens", s.tokens}};
}

nlohmann::json group_record(std::size_t step, std::size_t round, const RolloutGroup& group) {
  json j = to_json(summarize(group));
  j["type"] = "group";
  j["step"] = step;
  j["round"] = round;
  return j;
}

nlohmann::json step_record(const StepRow& row, const TrainingBatch* batch, bool include_timing) {
  json j{{"type", "step"},
         {"step", row.step},
         {"objective", row.objective},
         {"mean_reward", row.mean_reward},
         {"batch_mean_reward", row.batch_mean_reward},
         {"mean_length", row.mean_length},
         {"batch_mean_length", row.batch_mean_length},
         {"rounds_used", row.rounds_used},
         {"prompts_sampled", row.prompts_sampled},
         {"rollouts_generated", row.rollouts_generated},
         {"accuracy_survival", row.accuracy_survival},
         {"length_survival", row.length_survival},
         {"overall_survival", row.overall_survival},
         {"thresholds", thresholds_to_json(row.thresholds)},
         {"threshold_names", threshold_names(row.thresholds)},
         {"clip_fraction", row.clip_fraction},
         {"mean_ratio", row.mean_ratio},
         {"grad_norm", row.grad_norm},
         {"update_steps", row.update_steps}};
  if (include_timing) j["wall_clock"] = row.wall_clock;
  if (row.eval_avg_at_k) j["eval_avg_at_k"] = *row.eval_avg_at_k;
  if (batch) {
    json members = json::array();
    for (std::size_t i = 0; i < batch->groups.size(); ++i)
      members.push_back(json::array({batch->group_rounds[i], batch->groups[i].prompt().id}));
    j["batch"] = members;
  }
  return j;
}

StepRow step_row_from_json(const nlohmann::json& j) {
  StepRow r;
  r.step = j.at("step").get<std::size_t>();
  r.wall_clock = j.value("wall_clock", 0.0);
  r.objective = j.at("objective").get<double>();
  r.mean_reward = j.at("mean_reward").get<double>();
  r.batch_mean_reward = j.at("batch_mean_reward").get<double>();
  r.mean_length = j.at("mean_length").get<double>();
  r.batch_mean_length = j.at("batch_mean_length").get<double>();
  r.rounds_used = j.at("rounds_used").get<std::size_t>();
  r.prompts_sampled = j.at("prompts_sampled").get<std::size_t>();
  r.rollouts_generated = j.at("rollouts_generated").get<std::size_t>();
  r.accuracy_survival = j.at("accuracy_survival").get<double>();
  r.length_survival = j.at("length_survival").get<double>();
  r.overall_survival = j.at("overall_survival").get<double>();
  r.thresholds = thresholds_from_json(j.at("thresholds"), j.at("threshold_names"));
  r.clip_fraction = j.at("clip_fraction").get<double>();
  r.mean_ratio = j.at("mean_ratio").get<double>();
  r.grad_norm = j.at("grad_norm").get<double>();
  r.update_steps = j.at("update_steps").get<std::size_t>();
  if (j.contains("eval_avg_at_k")) r.eval_avg_at_k = j.at("eval_avg_at_k").get<double>();
  return r;
}

nlohmann::json starvation_record(std::size_t step, const PoolStats& s, const std::string& message) {
  return json{{"type", "starvation"},          {"step", step},
              {"message", message},            {"pool_size", s.pool_size},
              {"target_size", s.target_size},  {"rounds_used", s.rounds_used},
              {"prompts_sampled", s.prompts_sampled}, {"accuracy_survivors", s.accuracy_survivors},
              {"length_survivors", s.length_survivors}};
}

nlohmann::json summary_record(const RunRecord& rec) {
  return json{{"type", "summary"},
              {"name", rec.name()},
              {"final_avg_at_k", rec.final_avg_at_k},
              {"checkpoints_used", rec.checkpoints_used},
              {"checkpoint_fallback", rec.checkpoint_fallback},
              {"starved", rec.starved},
              {"error", rec.error},
              {"steps", rec.training_steps()}};
}

void write_line(std::ostream& out, const nlohmann::json& record) { out << record.dump() << '\n'; }

RunRecord load_run_record(std::istream& in) {
  RunRecord rec;
  bool have_config = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::invalid_argument(fmt::format("log line {}: {}", lineno, e.what()));
    }
    const auto type = j.at("type").get<std::string>();
    if (type == "config") {
      rec.config = parse_config(j.at("ini").get<std::string>());
      have_config = true;
    } else if (type == "step") {
      rec.rows.push_back(step_row_from_json(j));
    } else if (type == "starvation") {
      rec.starved = true;
      rec.error = j.at("message").get<std::string>();
    } else if (type == "summary") {
      rec.final_avg_at_k = j.at("final_avg_at_k").get<double>();
      rec.checkpoints_used = j.at("checkpoints_used").get<std::size_t>();
      rec.checkpoint_fallback = j.at("checkpoint_fallback").get<bool>();
      rec.starved = j.at("starved").get<bool>();
      rec.error = j.at("error").get<std::string>();
    }
  }
  if (!have_config) throw std::invalid_argument("log has no config record");
  return rec;
}

RunRecord load_run_record_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open log: " + path);
  return load_run_record(in);
}

AuditReport audit_log(std::istream& in) {
  AuditReport report;
  auto fail = [&](std::string msg) { report.failures.push_back(std::move(msg)); };

  std::optional<ExperimentConfig> cfg;
  // (step, round) -> kept ids
  std::map<std::pair<std::size_t, std::size_t>, std::set<PromptId>> kept;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(fmt::format("line {}: unparsable JSON ({})", lineno, e.what()));
      continue;
    }
    const auto type = j.value("type", std::string{});
    try {
      if (type == "config") {
        cfg = parse_config(j.at("ini").get<std::string>());
        continue;
      }
      if (!cfg) {
        if (type == "round" || type == "step" || type == "group") fail(fmt::format("line {}: record before config", lineno));
        continue;
      }
      const std::size_t group_size = cfg->sampler.group_size;

      if (type == "round") {
        ++report.rounds_checked;
        const auto step = j.at("step").get<std::size_t>();
        const auto round = j.at("round").get<std::size_t>();
        const auto where = fmt::format("step {} round {}", step, round);
        const auto sampled = j.at("sampled").get<std::vector<PromptId>>();
        const std::set<PromptId> sampled_set(sampled.begin(), sampled.end());
        if (sampled_set.size() != sampled.size()) fail(where + ": duplicate prompt within a round");

        std::vector<PromptId> ids;
        std::vector<double> stats;
        for (const auto& s : j.at("survivors")) {
          const auto id = s.at(0).get<PromptId>();
          const auto avg = s.at(1).get<double>();
          const auto pass = s.at(2).get<std::size_t>();
          const auto g = s.at(3).get<std::size_t>();
          if (g != group_size) fail(fmt::format("{}: prompt {} has {} responses, expected {}", where, id, g, group_size));
          if (!(pass > 0 && pass < g)) fail(fmt::format("{}: zero-variance prompt {} reached the length filter", where, id));
          if (!sampled_set.count(id)) fail(fmt::format("{}: survivor {} was never sampled", where, id));
          ids.push_back(id);
          stats.push_back(statistic_key(cfg->filter) == FilterKey::accuracy
                              ? static_cast<double>(pass) / static_cast<double>(g)
                              : avg);
        }

        const auto logged = decision_from_json(j.at("filter"));
        const auto recomputed = decide_on_values(stats, cfg->filter);
        if (logged.degenerate != recomputed.degenerate || logged.bands != recomputed.bands)
          fail(where + ": logged thresholds differ from those recomputed on the round's survivors");

        const auto kept_ids = j.at("kept").get<std::vector<PromptId>>();
        std::vector<PromptId> expected;
        for (std::size_t i = 0; i < ids.size(); ++i)
          if (logged.admits(stats[i])) expected.push_back(ids[i]);
        if (kept_ids != expected) fail(where + ": kept set does not match the logged predicate");
        kept[{step, round}] = std::set<PromptId>(kept_ids.begin(), kept_ids.end());
      } else if (type == "group") {
        ++report.groups_checked;
        const auto step = j.at("step").get<std::size_t>();
        const auto round = j.at("round").get<std::size_t>();
        const auto s = group_summary_from_json(j);
        const auto where = fmt::format("step {} round {} prompt {}", step, round, s.prompt_id);
        double total = 0.0;
        for (auto l : s.lengths) total += static_cast<double>(l);
        const double mean = s.lengths.empty() ? 0.0 : total / static_cast<double>(s.lengths.size());
        if (std::abs(mean - s.avg_length) > 1e-9 * std::max(1.0, std::abs(mean)))
          fail(where + ": avg_length disagrees with response lengths");
        if (s.lengths.size() != group_size) fail(where + ": wrong group size");
        if (!(s.pass_count() > 0 && s.pass_count() < s.lengths.size())) fail(where + ": zero-variance group in batch");
        auto it = kept.find({step, round});
        if (it == kept.end() || !it->second.count(s.prompt_id)) fail(where + ": group was not kept in its round");
      } else if (type == "step") {
        const auto step = j.at("step").get<std::size_t>();
        if (!j.contains("batch")) continue;
        const auto& batch = j.at("batch");
        if (batch.size() != cfg->sampler.train_batch)
          fail(fmt::format("step {}: batch holds {} groups, expected {}", step, batch.size(), cfg->sampler.train_batch));
        std::set<std::pair<std::size_t, PromptId>> seen;
        for (const auto& m : batch) {
          ++report.batch_entries_checked;
          const auto round = m.at(0).get<std::size_t>();
          const auto id = m.at(1).get<PromptId>();
          if (!seen.insert({round, id}).second) fail(fmt::format("step {}: duplicate batch entry", step));
          auto it = kept.find({step, round});
          if (it == kept.end() || !it->second.count(id))
            fail(fmt::format("step {}: batch member {} (round {}) was not kept", step, id, round));
        }
      }
    } catch (const std::exception& e) {
      fail(fmt::format("line {}: malformed {} record ({})", lineno, type, e.what()));
    }
  }
  if (!cfg) fail("log has no config record");
  return report;
}

AuditReport audit_log_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    AuditReport r;
    r.failures.push_back("cannot open log: " + path);
    return r;
  }
  return audit_log(in);
}

}  // namespace lspo
