#include "lspo/config.hpp"

#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

namespace lspo {
namespace {

namespace pt = boost::property_tree;

std::string fmt_double(double v) { return fmt::format("{}", v); }
std::string fmt_bool(bool v) { return v ? "true" : "false"; }

double to_double(const std::string& key, const std::string& s) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || s.empty()) throw std::invalid_argument(fmt::format("{}: expected a number, got '{}'", key, s));
  return v;
}

std::uint64_t to_u64(const std::string& key, const std::string& s) {
  std::size_t pos = 0;
  std::uint64_t v = 0;
  try {
    if (!s.empty() && s[0] == '-') throw std::invalid_argument("negative");
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || s.empty())
    throw std::invalid_argument(fmt::format("{}: expected a non-negative integer, got '{}'", key, s));
  return v;
}

bool to_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::invalid_argument(fmt::format("{}: expected true/false, got '{}'", key, s));
}

/// One entry per configurable key: how to print it and how to read it.
struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename T>
Field size_field(std::string section, std::string key, T ExperimentConfig::*group, std::size_t T::*member) {
  const std::string name = section + "." + key;
  return {section, key, [=](const ExperimentConfig& c) { return std::to_string(c.*group.*member); },
          [=](ExperimentConfig& c, const std::string& v) { c.*group.*member = static_cast<std::size_t>(to_u64(name, v)); }};
}

template <typename T>
Field double_field(std::string section, std::string key, T ExperimentConfig::*group, double T::*member) {
  const std::string name = section + "." + key;
  return {section, key, [=](const ExperimentConfig& c) { return fmt_double(c.*group.*member); },
          [=](ExperimentConfig& c, const std::string& v) { c.*group.*member = to_double(name, v); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    using C = ExperimentConfig;
    std::vector<Field> f;
    // [experiment]
    f.push_back({"experiment", "name", [](const C& c) { return c.name; }, [](C& c, const std::string& v) { c.name = v; }});
    f.push_back({"experiment", "seed", [](const C& c) { return std::to_string(c.seed); },
                 [](C& c, const std::string& v) { c.seed = to_u64("experiment.seed", v); }});
    f.push_back({"experiment", "steps", [](const C& c) { return std::to_string(c.steps); },
                 [](C& c, const std::string& v) { c.steps = to_u64("experiment.steps", v); }});
    f.push_back({"experiment", "wall_clock_seconds", [](const C& c) { return fmt_double(c.wall_clock_seconds); },
                 [](C& c, const std::string& v) { c.wall_clock_seconds = to_double("experiment.wall_clock_seconds", v); }});
    f.push_back({"experiment", "checkpoint_interval", [](const C& c) { return std::to_string(c.checkpoint_interval); },
                 [](C& c, const std::string& v) { c.checkpoint_interval = to_u64("experiment.checkpoint_interval", v); }});
    f.push_back({"experiment", "eval_k", [](const C& c) { return std::to_string(c.eval_k); },
                 [](C& c, const std::string& v) { c.eval_k = to_u64("experiment.eval_k", v); }});
    f.push_back({"experiment", "log_timing", [](const C& c) { return fmt_bool(c.log_timing); },
                 [](C& c, const std::string& v) { c.log_timing = to_bool("experiment.log_timing", v); }});
    f.push_back({"experiment", "log_groups", [](const C& c) { return fmt_bool(c.log_groups); },
                 [](C& c, const std::string& v) { c.log_groups = to_bool("experiment.log_groups", v); }});
    // [loss]
    f.push_back({"loss", "algorithm", [](const C& c) { return std::string(to_string(c.loss.algorithm)); },
                 [](C& c, const std::string& v) { c.loss.algorithm = parse_algorithm(v); }});
    f.push_back(double_field("loss", "eps", &C::loss, &SurrogateLossConfig::eps));
    f.push_back(double_field("loss", "eps_low", &C::loss, &SurrogateLossConfig::eps_low));
    f.push_back(double_field("loss", "eps_high", &C::loss, &SurrogateLossConfig::eps_high));
    f.push_back(double_field("loss", "beta", &C::loss, &SurrogateLossConfig::beta));
    f.push_back(double_field("loss", "advantage_eps", &C::loss, &SurrogateLossConfig::advantage_eps));
    // [optimizer]
    f.push_back(size_field("optimizer", "mini_batch", &C::optim, &OptimizerConfig::mini_batch));
    f.push_back(double_field("optimizer", "lr", &C::optim, &OptimizerConfig::lr));
    f.push_back({"optimizer", "mode", [](const C& c) { return std::string(to_string(c.optim.mode)); },
                 [](C& c, const std::string& v) { c.optim.mode = parse_optimizer_mode(v); }});
    f.push_back(double_field("optimizer", "rms_decay", &C::optim, &OptimizerConfig::rms_decay));
    f.push_back(double_field("optimizer", "rms_eps", &C::optim, &OptimizerConfig::rms_eps));
    // [filter]
    f.push_back({"filter", "kind", [](const C& c) { return std::string(to_string(c.filter.kind)); },
                 [](C& c, const std::string& v) { c.filter.kind = parse_filter_kind(v); }});
    f.push_back(double_field("filter", "l_low", &C::filter, &FilterSpec::l_low));
    f.push_back(double_field("filter", "l_high", &C::filter, &FilterSpec::l_high));
    f.push_back(double_field("filter", "l_max", &C::filter, &FilterSpec::l_max));
    f.push_back({"filter", "ranges", [](const C& c) { return render_ranges(c.filter.ranges); },
                 [](C& c, const std::string& v) { c.filter.ranges = parse_ranges(v); }});
    f.push_back({"filter", "key", [](const C& c) { return std::string(to_string(c.filter.key)); },
                 [](C& c, const std::string& v) { c.filter.key = parse_filter_key(v); }});
    f.push_back(double_field("filter", "alpha", &C::filter, &FilterSpec::alpha));
    f.push_back(double_field("filter", "alpha_high", &C::filter, &FilterSpec::alpha_high));
    f.push_back(double_field("filter", "alpha_max", &C::filter, &FilterSpec::alpha_max));
    f.push_back(double_field("filter", "absolute_lower", &C::filter, &FilterSpec::absolute_lower));
    f.push_back(double_field("filter", "absolute_upper", &C::filter, &FilterSpec::absolute_upper));
    // [sampler]
    f.push_back(size_field("sampler", "train_batch", &C::sampler, &SamplerConfig::train_batch));
    f.push_back(size_field("sampler", "rollout_batch", &C::sampler, &SamplerConfig::rollout_batch));
    f.push_back(size_field("sampler", "group_size", &C::sampler, &SamplerConfig::group_size));
    f.push_back(size_field("sampler", "oversample_factor", &C::sampler, &SamplerConfig::oversample_factor));
    f.push_back(size_field("sampler", "max_rounds", &C::sampler, &SamplerConfig::max_rounds));
    f.push_back({"sampler", "selection", [](const C& c) { return std::string(to_string(c.sampler.selection)); },
                 [](C& c, const std::string& v) { c.sampler.selection = parse_selection_mode(v); }});
    f.push_back(size_field("sampler", "workers", &C::sampler, &SamplerConfig::workers));
    // [reward]
    f.push_back(size_field("reward", "max_limit", &C::reward, &RewardConfig::max_limit));
    f.push_back(size_field("reward", "cache", &C::reward, &RewardConfig::cache));
    f.push_back(double_field("reward", "correct_reward", &C::reward, &RewardConfig::correct_reward));
    f.push_back(double_field("reward", "incorrect_reward", &C::reward, &RewardConfig::incorrect_reward));
    f.push_back({"reward", "overlong_penalty", [](const C& c) { return fmt_bool(c.reward.overlong_penalty); },
                 [](C& c, const std::string& v) { c.reward.overlong_penalty = to_bool("reward.overlong_penalty", v); }});
    // [task]
    f.push_back(size_field("task", "num_answers", &C::task, &ToyTaskConfig::num_answers));
    f.push_back(size_field("task", "max_len", &C::task, &ToyTaskConfig::max_len));
    f.push_back(size_field("task", "train_size", &C::task, &ToyTaskConfig::train_size));
    f.push_back(size_field("task", "eval_size", &C::task, &ToyTaskConfig::eval_size));
    f.push_back({"task", "seed", [](const C& c) { return std::to_string(c.task.seed); },
                 [](C& c, const std::string& v) { c.task.seed = to_u64("task.seed", v); }});
    // [policy]
    f.push_back(size_field("policy", "context_window", &C::policy, &PolicyConfig::context_window));
    f.push_back(double_field("policy", "init_scale", &C::policy, &PolicyConfig::init_scale));
    f.push_back(double_field("policy", "temperature", &C::policy, &PolicyConfig::temperature));
    return f;
  }();
  return all;
}

const Field& find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields())
    if (f.section == section && f.key == key) return f;
  throw std::invalid_argument(fmt::format("unknown config key '{}.{}'", section, key));
}

}  // namespace

void ExperimentConfig::validate() const {
  if (checkpoint_interval < 1) throw std::invalid_argument("checkpoint_interval must be >= 1");
  if (eval_k < 1) throw std::invalid_argument("eval_k must be >= 1");
  if (!(wall_clock_seconds >= 0.0)) throw std::invalid_argument("wall_clock_seconds must be >= 0");
  loss.validate();
  optim.validate();
  filter.validate();
  sampler.validate();
  reward.validate();
  task.validate();
  if (policy.context_window < 1) throw std::invalid_argument("policy.context_window must be >= 1");
  if (!(policy.temperature > 0.0)) throw std::invalid_argument("policy.temperature must be > 0");
  if (!(policy.init_scale >= 0.0)) throw std::invalid_argument("policy.init_scale must be >= 0");
}

std::string render_ranges(const std::vector<PercentRange>& ranges) {
  std::string out;
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    if (i) out += ",";
    out += fmt::format("{}:{}", ranges[i].lo, ranges[i].hi);
  }
  return out;
}

std::vector<PercentRange> parse_ranges(const std::string& text) {
  std::vector<PercentRange> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("filter.ranges: expected lo:hi pairs, got '" + item + "'");
    const PercentRange r{to_double("filter.ranges", item.substr(0, colon)),
                         to_double("filter.ranges", item.substr(colon + 1))};
    if (!(r.lo >= 0.0 && r.lo < r.hi && r.hi <= 100.0))
      throw std::invalid_argument("filter.ranges: each range needs 0 <= lo < hi <= 100, got '" + item + "'");
    out.push_back(r);
  }
  return out;
}

std::string render_config(const ExperimentConfig& cfg) {
  pt::ptree tree;
  for (const auto& f : fields()) {
    // property_tree treats '.' as a path separator, so nest explicitly.
    auto& section = tree.get_child_optional(f.section) ? tree.get_child(f.section)
                                                        : tree.add_child(f.section, pt::ptree{});
    section.put(pt::ptree::path_type(f.key, '\0'), f.get(cfg));
  }
  std::ostringstream out;
  pt::write_ini(out, tree);
  return out.str();
}

ExperimentConfig parse_config(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw std::invalid_argument(std::string("config parse error: ") + e.what());
  }
  ExperimentConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw std::invalid_argument(fmt::format("config key '{}' must live inside a [section]", section));
    for (const auto& [key, value] : body) find_field(section, key).set(cfg, value.data());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw std::invalid_argument("override must look like section.key=value: " + assignment);
  find_field(assignment.substr(0, dot), assignment.substr(dot + 1, eq - dot - 1)).set(cfg, assignment.substr(eq + 1));
}

}  // namespace lspo
