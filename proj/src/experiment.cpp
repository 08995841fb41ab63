#include "lspo/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <future>
#include <ostream>
#include <stdexcept>
#include <tuple>

#include <fmt/format.h>

#include "lspo/run_log.hpp"

namespace lspo {
namespace {

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

StepRow training_row(std::size_t step, const FillResult& fill, const UpdateStats& update) {
  StepRow row;
  row.step = step;
  double reward_sum = 0.0, length_sum = 0.0;
  std::size_t responses = 0;
  for (const auto& r : fill.rounds) {
    reward_sum += r.reward_sum;
    length_sum += r.length_sum;
    responses += r.responses;
  }
  row.mean_reward = responses ? reward_sum / static_cast<double>(responses) : 0.0;
  row.mean_length = responses ? length_sum / static_cast<double>(responses) : 0.0;

  double batch_reward = 0.0, batch_length = 0.0;
  std::size_t batch_responses = 0;
  for (const auto& g : fill.batch.groups) {
    for (const auto& resp : g.responses()) {
      batch_reward += resp.reward();
      batch_length += static_cast<double>(resp.length());
    }
    batch_responses += g.size();
  }
  row.batch_mean_reward = batch_responses ? batch_reward / static_cast<double>(batch_responses) : 0.0;
  row.batch_mean_length = batch_responses ? batch_length / static_cast<double>(batch_responses) : 0.0;

  row.rounds_used = fill.stats.rounds_used;
  row.prompts_sampled = fill.stats.prompts_sampled;
  row.rollouts_generated = fill.stats.rollouts_generated;
  row.accuracy_survival = fill.stats.accuracy_survival();
  row.length_survival = fill.stats.length_survival();
  row.overall_survival = fill.stats.overall_survival();
  if (!fill.rounds.empty()) row.thresholds = fill.rounds.back().length_decision.thresholds;

  std::vector<double> ratios, norms;
  for (const auto& m : update.mini_batches) {
    ratios.push_back(m.mean_ratio);
    norms.push_back(m.grad_norm);
  }
  row.objective = update.mean_objective();
  row.clip_fraction = update.mean_clip_fraction();
  row.mean_ratio = mean_of(ratios);
  row.grad_norm = mean_of(norms);
  row.update_steps = update.mini_batches.size();
  return row;
}

void finalize_score(RunRecord& rec) {
  std::vector<double> evals;
  for (const auto& r : rec.rows)
    if (r.eval_avg_at_k) evals.push_back(*r.eval_avg_at_k);
  rec.checkpoints_used = std::min<std::size_t>(2, evals.size());
  rec.checkpoint_fallback = evals.size() < 2;
  if (evals.size() >= 2)
    rec.final_avg_at_k = 0.5 * (evals[evals.size() - 1] + evals[evals.size() - 2]);
  else if (!evals.empty())
    rec.final_avg_at_k = evals.back();
}

}  // namespace

bool StepRow::same_metrics(const StepRow& o) const {
  auto strip = [](StepRow r) {
    r.wall_clock = 0.0;
    return r;
  };
  const auto a = strip(*this);
  const auto b = strip(o);
  return std::tie(a.step, a.objective, a.mean_reward, a.batch_mean_reward, a.mean_length, a.batch_mean_length,
                  a.rounds_used, a.prompts_sampled, a.rollouts_generated, a.accuracy_survival, a.length_survival,
                  a.overall_survival, a.thresholds, a.clip_fraction, a.mean_ratio, a.grad_norm, a.update_steps,
                  a.eval_avg_at_k) ==
         std::tie(b.step, b.objective, b.mean_reward, b.batch_mean_reward, b.mean_length, b.batch_mean_length,
                  b.rounds_used, b.prompts_sampled, b.rollouts_generated, b.accuracy_survival, b.length_survival,
                  b.overall_survival, b.thresholds, b.clip_fraction, b.mean_ratio, b.grad_norm, b.update_steps,
                  b.eval_avg_at_k);
}

std::size_t RunRecord::training_steps() const {
  return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const StepRow& r) { return r.step > 0; }));
}

double evaluate_avg_at_k(const TinyPolicy& policy, const ToyTask& task, std::size_t k, std::uint64_t seed,
                         std::size_t step, const RewardConfig& reward) {
  const auto& prompts = task.eval_set();
  if (prompts.empty()) return 0.0;
  double total = 0.0;
  for (const auto& p : prompts) {
    Rng rng(mix_seed({seed, hash_tag("eval"), step, p.id}));
    std::vector<bool> verdicts;
    verdicts.reserve(k);
    for (std::size_t i = 0; i < k; ++i) verdicts.push_back(sample_response(policy, task, p, rng, reward).correct());
    total += avg_at_k(verdicts, k);
  }
  return total / static_cast<double>(prompts.size());
}

RunRecord run_experiment(const ExperimentConfig& cfg, std::ostream* log) {
  cfg.validate();
  RunRecord rec;
  rec.config = cfg;

  const ToyTask task(cfg.task);
  TinyPolicy policy = TinyPolicy::random_init(task.vocab_size(), cfg.policy.context_window, cfg.policy.init_scale,
                                              mix_seed({cfg.seed, hash_tag("policy")}), cfg.policy.temperature);
  const TinyPolicy reference = policy;
  SamplerConfig sampler = cfg.sampler;
  sampler.rng_seed = mix_seed({cfg.seed, hash_tag("sampler")});
  const std::uint64_t rollout_seed = mix_seed({cfg.seed, hash_tag("rollouts")});
  PolicyUpdater updater(cfg.loss, cfg.optim);
  DatasetPromptSource source(task.train_set());

  auto emit = [&](const nlohmann::json& j) {
    if (log) write_line(*log, j);
  };
  emit(config_record(cfg));

  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  StepRow initial;
  initial.step = 0;
  initial.eval_avg_at_k = evaluate_avg_at_k(policy, task, cfg.eval_k, cfg.seed, 0, cfg.reward);
  initial.wall_clock = elapsed();
  rec.rows.push_back(initial);
  emit(step_record(initial, nullptr, cfg.log_timing));

  const bool has_step_budget = cfg.steps > 0;
  const bool has_time_budget = cfg.wall_clock_seconds > 0.0;
  for (std::size_t step = 1; has_step_budget || has_time_budget; ++step) {
    if (has_step_budget && step > cfg.steps) break;
    if (has_time_budget && elapsed() >= cfg.wall_clock_seconds) break;

    const RolloutFn rollout = [&](const Prompt& prompt, const RolloutRequest& req) {
      return toy_rollout(policy, task, prompt, req, sampler.group_size, rollout_seed, cfg.reward);
    };
    FillResult fill;
    try {
      fill = fill_batch(source, rollout, cfg.filter, sampler, step);
    } catch (const StarvationError& e) {
      for (const auto& r : e.rounds()) emit(round_record(r));
      emit(starvation_record(step, e.stats(), e.what()));
      rec.starved = true;
      rec.error = e.what();
      break;
    }
    for (const auto& r : fill.rounds) emit(round_record(r));

    const auto update = updater.update_step(policy, &reference, fill.batch);
    for (std::size_t i = 0; i < update.mini_batches.size(); ++i) emit(update_record(step, i, update.mini_batches[i]));

    StepRow row = training_row(step, fill, update);
    if (step % cfg.checkpoint_interval == 0)
      row.eval_avg_at_k = evaluate_avg_at_k(policy, task, cfg.eval_k, cfg.seed, step, cfg.reward);
    row.wall_clock = elapsed();
    if (cfg.log_groups)
      for (std::size_t i = 0; i < fill.batch.groups.size(); ++i)
        emit(group_record(step, fill.batch.group_rounds[i], fill.batch.groups[i]));
    emit(step_record(row, &fill.batch, cfg.log_timing));
    rec.rows.push_back(std::move(row));
  }

  finalize_score(rec);
  emit(summary_record(rec));
  return rec;
}

std::vector<std::pair<std::string, FilterSpec>> ablation_variants() {
  return {
      {"none", FilterSpec::none()},
      {"accuracy-0-30-65-95", FilterSpec::keep_ranges({{0, 30}, {65, 95}}, FilterKey::accuracy)},
      {"length-0-60", FilterSpec::keep_ranges({{0, 60}})},
      {"length-20-80", FilterSpec::keep_ranges({{20, 80}})},
      {"length-40-100", FilterSpec::keep_ranges({{40, 100}})},
      {"length-0-30-60-90", FilterSpec::keep_ranges({{0, 30}, {60, 90}})},
      {"lspo", FilterSpec::lspo(0.3, 0.65, 0.95)},
      {"length-value", FilterSpec::value_relative(0.7, 0.35, 0.05)},
  };
}

std::vector<RunRecord> run_grid(const ExperimentConfig& base,
                                const std::vector<std::pair<std::string, FilterSpec>>& variants,
                                const std::string& out_dir, std::size_t jobs) {
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  auto run_one = [&](std::size_t i) {
    ExperimentConfig cfg = base;
    cfg.name = base.name + "-" + variants[i].first;
    cfg.filter = variants[i].second;
    if (out_dir.empty()) return run_experiment(cfg);
    std::ofstream log(std::filesystem::path(out_dir) / (cfg.name + ".jsonl"));
    if (!log) throw std::runtime_error("cannot write log for " + cfg.name);
    return run_experiment(cfg, &log);
  };

  std::vector<RunRecord> out(variants.size());
  jobs = std::max<std::size_t>(jobs, 1);
  for (std::size_t begin = 0; begin < variants.size(); begin += jobs) {
    std::vector<std::future<RunRecord>> wave;
    const std::size_t end = std::min(begin + jobs, variants.size());
    for (std::size_t i = begin; i < end; ++i) wave.push_back(std::async(std::launch::async, run_one, i));
    for (std::size_t i = begin; i < end; ++i) out[i] = wave[i - begin].get();
  }
  return out;
}

std::string describe_filter(const FilterSpec& spec) {
  switch (spec.kind) {
    case FilterKind::none: return "acc-only";
    case FilterKind::zero_variance: return "zero-variance";
    case FilterKind::lspo_percentile:
      return fmt::format("lspo [0,{}],[{},{}]", spec.l_low * 100, spec.l_high * 100, spec.l_max * 100);
    case FilterKind::keep_ranges_percentile: {
      std::string r;
      for (const auto& x : spec.ranges) r += fmt::format("{}[{},{}]", r.empty() ? "" : ",", x.lo, x.hi);
      return fmt::format("{}-pct {}", to_string(spec.key), r);
    }
    case FilterKind::value_absolute:
      return fmt::format("abs <= {} | >= {}", spec.absolute_lower, spec.absolute_upper);
    case FilterKind::value_relative:
      return fmt::format("rel a={},{},{}", spec.alpha, spec.alpha_high, spec.alpha_max);
  }
  return "unknown";
}

Comparison compare_runs(const std::vector<RunRecord>& records) {
  if (records.size() < 2) throw std::invalid_argument("compare_runs needs at least two runs");
  Comparison cmp;
  cmp.eval_k = records.front().config.eval_k;
  for (const auto& rec : records) {
    if (rec.config.eval_k != cmp.eval_k)
      throw std::invalid_argument(fmt::format("run '{}' evaluates avg@{}, expected avg@{}", rec.name(),
                                              rec.config.eval_k, cmp.eval_k));
    ComparisonRow row;
    row.name = rec.name();
    row.algorithm = std::string(to_string(rec.config.loss.algorithm));
    row.filter = describe_filter(rec.config.filter);
    row.final_avg_at_k = rec.final_avg_at_k;
    row.checkpoints_used = rec.checkpoints_used;
    row.checkpoint_fallback = rec.checkpoint_fallback;
    row.starved = rec.starved;
    std::vector<double> rollouts, lengths, rounds;
    for (const auto& r : rec.rows) {
      if (r.step == 0) continue;
      rollouts.push_back(static_cast<double>(r.rollouts_generated));
      lengths.push_back(r.mean_length);
      rounds.push_back(static_cast<double>(r.rounds_used));
    }
    row.rollouts_per_step = mean_of(rollouts);
    row.mean_length = mean_of(lengths);
    row.rounds_per_step = mean_of(rounds);
    cmp.rows.push_back(row);
  }
  for (auto& row : cmp.rows) {
    row.rank = 1 + static_cast<std::size_t>(std::count_if(cmp.rows.begin(), cmp.rows.end(), [&](const ComparisonRow& o) {
                 return o.final_avg_at_k > row.final_avg_at_k;
               }));
  }
  cmp.tie_at_top = std::count_if(cmp.rows.begin(), cmp.rows.end(), [](const ComparisonRow& r) { return r.rank == 1; }) > 1;
  return cmp;
}

std::string render_comparison(const Comparison& cmp) {
  std::string out = fmt::format("{:<28} {:<6} {:<30} {:>10} {:>13} {:>9} {:>11} {:>5}\n", "run", "loss", "filter",
                                fmt::format("avg@{}", cmp.eval_k), "rollouts/step", "mean len", "rounds/step", "rank");
  for (const auto& r : cmp.rows) {
    std::string score = fmt::format("{:.4f}", r.final_avg_at_k);
    if (r.checkpoint_fallback) score += "*";
    out += fmt::format("{:<28} {:<6} {:<30} {:>10} {:>13.1f} {:>9.3f} {:>11.2f} {:>5}{}\n", r.name, r.algorithm, r.filter,
                       score, r.rollouts_per_step, r.mean_length, r.rounds_per_step, r.rank, r.starved ? " (starved)" : "");
  }
  if (cmp.tie_at_top) out += "tie: several runs share the best final score\n";
  if (std::any_of(cmp.rows.begin(), cmp.rows.end(), [](const auto& r) { return r.checkpoint_fallback; }))
    out += "* fewer than two checkpoints; score uses the single available checkpoint\n";
  return out;
}

void write_comparison_csv(const Comparison& cmp, std::ostream& out) {
  out << "run,algorithm,filter,final_avg_at_k,checkpoints_used,rollouts_per_step,mean_length,rounds_per_step,rank,starved\n";
  for (const auto& r : cmp.rows)
    out << fmt::format("{},{},\"{}\",{},{},{},{},{},{},{}\n", r.name, r.algorithm, r.filter, r.final_avg_at_k,
                       r.checkpoints_used, r.rollouts_per_step, r.mean_length, r.rounds_per_step, r.rank, r.starved);
}

void write_steps_csv(const RunRecord& record, std::ostream& out) {
  out << "step,wall_clock,objective,mean_reward,batch_mean_reward,mean_length,batch_mean_length,rounds_used,"
         "prompts_sampled,rollouts_generated,accuracy_survival,length_survival,overall_survival,clip_fraction,"
         "mean_ratio,grad_norm,eval_avg_at_k\n";
  for (const auto& r : record.rows) {
    out << fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", r.step, r.wall_clock, r.objective,
                       r.mean_reward, r.batch_mean_reward, r.mean_length, r.batch_mean_length, r.rounds_used,
                       r.prompts_sampled, r.rollouts_generated, r.accuracy_survival, r.length_survival,
                       r.overall_survival, r.clip_fraction, r.mean_ratio, r.grad_norm,
                       r.eval_avg_at_k ? fmt::format("{}", *r.eval_avg_at_k) : std::string{});
  }
}

}  // namespace lspo
