// lspo: run, sweep, audit and compare length-aware sampling experiments.
//
// Exit codes: 0 success, 1 usage or runtime error, 2 audit failure,
// 3 batch starvation.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lspo/experiment.hpp"
#include "lspo/run_log.hpp"

namespace {

constexpr int kExitError = 1;
constexpr int kExitAudit = 2;
constexpr int kExitStarved = 3;

lspo::ExperimentConfig load(const std::string& path, const std::vector<std::string>& overrides) {
  lspo::ExperimentConfig cfg = path.empty() ? lspo::ExperimentConfig{} : lspo::load_config(path);
  for (const auto& o : overrides) lspo::apply_override(cfg, o);
  cfg.validate();
  return cfg;
}

void print_run_summary(const lspo::RunRecord& rec) {
  std::cout << rec.name() << ": " << rec.training_steps() << " steps, final avg@" << rec.config.eval_k << " = "
            << rec.final_avg_at_k << (rec.checkpoint_fallback ? " (single checkpoint)" : "") << "\n";
  if (rec.starved) std::cout << "  starved: " << rec.error << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Length-aware dynamic sampling experiments on a toy verifiable task"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string log_path, csv_path;
  auto* run = app.add_subcommand("run", "Run a single experiment");
  run->add_option("-c,--config", config_path, "INI config file (defaults when omitted)");
  run->add_option("-s,--set", overrides, "Override, e.g. --set sampler.train_batch=64");
  run->add_option("-l,--log", log_path, "JSONL log output");
  run->add_option("--csv", csv_path, "Per-step CSV output");
  bool print_config = false;
  run->add_flag("--print-config", print_config, "Print the effective config and exit");

  std::string out_dir;
  std::size_t jobs = 1;
  std::vector<std::string> variant_names;
  auto* grid = app.add_subcommand("grid", "Run the filter-variant ablation grid");
  grid->add_option("-c,--config", config_path, "Base INI config file");
  grid->add_option("-s,--set", overrides, "Override applied to every run");
  grid->add_option("-o,--out-dir", out_dir, "Directory for per-run JSONL logs");
  grid->add_option("-j,--jobs", jobs, "Experiments to run concurrently")->check(CLI::PositiveNumber);
  grid->add_option("--variants", variant_names, "Subset of variant names")->delimiter(',');
  grid->add_option("--csv", csv_path, "Comparison CSV output");

  std::string audit_path;
  auto* audit = app.add_subcommand("audit", "Replay a JSONL log and re-check every filter decision");
  audit->add_option("log", audit_path, "JSONL log")->required();

  std::vector<std::string> log_paths;
  auto* compare = app.add_subcommand("compare", "Tabulate final scores and costs of several runs");
  compare->add_option("logs", log_paths, "JSONL logs")->required()->expected(2, -1);
  compare->add_option("--csv", csv_path, "Comparison CSV output");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const auto cfg = load(config_path, overrides);
      if (print_config) {
        std::cout << lspo::render_config(cfg);
        return 0;
      }
      std::ofstream log;
      if (!log_path.empty()) {
        log.open(log_path);
        if (!log) throw std::runtime_error("cannot write " + log_path);
      }
      const auto rec = lspo::run_experiment(cfg, log_path.empty() ? nullptr : &log);
      if (!csv_path.empty()) {
        std::ofstream csv(csv_path);
        lspo::write_steps_csv(rec, csv);
      }
      print_run_summary(rec);
      return rec.starved ? kExitStarved : 0;
    }

    if (*grid) {
      const auto base = load(config_path, overrides);
      auto variants = lspo::ablation_variants();
      if (!variant_names.empty()) {
        decltype(variants) chosen;
        for (const auto& name : variant_names) {
          auto it = std::find_if(variants.begin(), variants.end(), [&](const auto& v) { return v.first == name; });
          if (it == variants.end()) throw std::invalid_argument("unknown variant: " + name);
          chosen.push_back(*it);
        }
        variants = chosen;
      }
      const auto records = lspo::run_grid(base, variants, out_dir, jobs);
      bool starved = false;
      for (const auto& r : records) starved |= r.starved;
      if (records.size() >= 2) {
        const auto cmp = lspo::compare_runs(records);
        std::cout << lspo::render_comparison(cmp);
        if (!csv_path.empty()) {
          std::ofstream csv(csv_path);
          lspo::write_comparison_csv(cmp, csv);
        }
      } else {
        for (const auto& r : records) print_run_summary(r);
      }
      return starved ? kExitStarved : 0;
    }

    if (*audit) {
      const auto report = lspo::audit_log_file(audit_path);
      std::cout << "rounds checked: " << report.rounds_checked << ", batch entries: " << report.batch_entries_checked
                << ", group records: " << report.groups_checked << "\n";
      for (const auto& f : report.failures) std::cout << "FAIL " << f << "\n";
      std::cout << (report.ok() ? "audit passed" : "audit FAILED") << "\n";
      return report.ok() ? 0 : kExitAudit;
    }

    if (*compare) {
      std::vector<lspo::RunRecord> records;
      for (const auto& p : log_paths) records.push_back(lspo::load_run_record_file(p));
      const auto cmp = lspo::compare_runs(records);
      std::cout << lspo::render_comparison(cmp);
      if (!csv_path.empty()) {
        std::ofstream csv(csv_path);
        lspo::write_comparison_csv(cmp, csv);
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return 0;
}
