// Experiment runner: gen-data, train-reward-model, train-policy, evaluate,
// sweep, report. Every run writes manifest_<subcommand>.json next to its
// outputs; metric files depend only on (config, seed).

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "safro/config.hpp"
#include "safro/eval.hpp"
#include "safro/io.hpp"
#include "safro/pipeline.hpp"

#ifndef SAFRO_CODE_VERSION
#define SAFRO_CODE_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace safro;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::string variant = "full";
  std::string param;
  std::string values;
  std::size_t jobs = 0;
  std::size_t fixed_budget = 0;
  std::vector<std::string> overrides;
};

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Config resolve(const Options& o, const std::vector<std::string>& extra = {}) {
  Json file;
  if (!o.config_path.empty()) {
    try {
      file = Json::parse(read_file(o.config_path));
    } catch (const Json::parse_error& e) {
      throw ConfigError(o.config_path + ": " + e.what());
    }
  }
  auto overrides = o.overrides;
  if (o.seed) overrides.push_back("seed=" + std::to_string(*o.seed));
  if (o.jobs > 0) overrides.push_back("drpo.jobs=" + std::to_string(o.jobs));
  overrides.insert(overrides.end(), extra.begin(), extra.end());
  return resolve_config(file, overrides);
}

// Records what produced the outputs of one subcommand.
class Manifest {
 public:
  Manifest(std::string subcommand, const Options& o, const Config& c)
      : dir_(o.out_dir), subcommand_(std::move(subcommand)), start_(utc_now()) {
    j_["subcommand"] = subcommand_;
    j_["code_version"] = SAFRO_CODE_VERSION;
    j_["seed"] = c.seed;
    j_["config_hash"] = hex64(config_hash(c));
    j_["config"] = config_json(c);
  }

  void set(const std::string& key, OrderedJson value) { j_[key] = std::move(value); }
  void output(const fs::path& p) { outputs_.push_back(p.lexically_relative(dir_).generic_string()); }

  void write() {
    j_["outputs"] = outputs_;
    j_["start_time"] = start_;
    j_["end_time"] = utc_now();
    write_file_atomic(dir_ / ("manifest_" + subcommand_ + ".json"), j_.dump(2) + "\n");
  }

 private:
  fs::path dir_;
  std::string subcommand_;
  std::string start_;
  OrderedJson j_;
  std::vector<std::string> outputs_;
};

fs::path require_artifact(const fs::path& p, const char* producer) {
  if (!fs::exists(p)) {
    throw Error("missing dependency artifact " + p.string() + " (run `" + producer + "` first)");
  }
  return p;
}

std::string jsonl(const std::vector<OrderedJson>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  return out;
}

std::string policy_trace(const std::vector<IterationMetrics>& trace) {
  std::string out;
  for (const auto& m : trace) out += metrics_json(m).dump() + "\n";
  return out;
}

std::string loss_trace(const std::vector<double>& loss) {
  std::vector<OrderedJson> rows;
  for (std::size_t e = 0; e < loss.size(); ++e) {
    OrderedJson r;
    r["epoch"] = e;
    r["weighted_mse"] = loss[e];
    rows.push_back(r);
  }
  return jsonl(rows);
}

void write_report(const fs::path& stem, const EvalReport& r, Manifest& m) {
  auto json_path = stem;
  json_path += ".json";
  auto text_path = stem;
  text_path += ".txt";
  write_file_atomic(json_path, report_json(r).dump(2) + "\n");
  write_file_atomic(text_path, report_table(r));
  m.output(json_path);
  m.output(text_path);
}

RewardModel load_checked_reward_model(const fs::path& dir, const Config& c) {
  const auto path = require_artifact(dir / "reward_model.bin", "train-reward-model");
  auto model = load_reward_model(path);
  if (!(model.shape() == c.reward_model_shape())) {
    throw ConfigError("reward model checkpoint " + path.string() + " does not match the configured shape");
  }
  return model;
}

/*
 * Subcommands
 */

void gen_data(const Options& o) {
  const Config c = resolve(o);
  fs::create_directories(o.out_dir);
  Manifest m("gen-data", o, c);
  const SimEnv env(c.env_config());
  const auto logs = generate_logs(c, env);
  const auto path = fs::path(o.out_dir) / "episodes.jsonl";
  save_episodes(path, logs);
  m.output(path);
  m.set("episodes", logs.size());
  m.write();
  std::cout << "wrote " << logs.size() << " episodes to " << path.string() << "\n";
}

void train_reward(const Options& o) {
  const Config c = resolve(o);
  const fs::path dir(o.out_dir);
  const auto logs = load_episodes(require_artifact(dir / "episodes.jsonl", "gen-data"));
  Manifest m("train-reward-model", o, c);
  const auto result = fit_reward_model(c, logs);
  const auto model_path = dir / "reward_model.bin";
  save_reward_model(model_path, result.model, c.satisfaction);
  write_file_atomic(dir / "reward_model_trace.jsonl", loss_trace(result.loss_trace));
  m.output(model_path);
  m.output(dir / "reward_model_trace.jsonl");
  m.set("final_weighted_mse", result.loss_trace.back());
  m.write();
  std::cout << "reward model weighted MSE " << result.loss_trace.front() << " -> " << result.loss_trace.back() << "\n";
}

void train_policy_cmd(const Options& o) {
  const Variant v = parse_variant(o.variant);
  const Config c = apply_variant(resolve(o), v);
  c.validate();
  const fs::path dir(o.out_dir);
  const auto model = load_checked_reward_model(dir, c);
  Manifest m("train-policy_" + variant_name(v), o, c);
  m.set("variant", variant_name(v));
  const SimEnv env(c.env_config());
  const auto name = "policy_" + variant_name(v);
  const auto ckpt_dir = dir / "checkpoints";
  auto on_iteration = [&](const IterationMetrics& it, const Policy& p) {
    const std::size_t every = c.run.checkpoint_every;
    if (every == 0 || (it.iteration + 1) % every != 0) return;
    fs::create_directories(ckpt_dir);
    const auto path = ckpt_dir / (name + "_iter" + std::to_string(it.iteration + 1) + ".bin");
    save_policy(path, p);
    m.output(path);
  };
  const auto result = fit_policy(c, v, env, model, on_iteration);
  const auto policy_path = dir / (name + ".bin");
  save_policy(policy_path, result.policy);
  const auto trace_path = dir / ("train_" + variant_name(v) + ".jsonl");
  write_file_atomic(trace_path, policy_trace(result.trace));
  m.output(policy_path);
  m.output(trace_path);
  m.write();
  const auto& last = result.trace.back();
  std::cout << "trained " << variant_name(v) << ": final mean reward " << last.mean_reward << ", entropy "
            << last.mean_entropy << "\n";
}

void evaluate_cmd(const Options& o) {
  const Variant v = parse_variant(o.variant);
  const Config c = apply_variant(resolve(o), v);
  const fs::path dir(o.out_dir);
  const auto model = load_checked_reward_model(dir, c);
  const auto policy = load_policy(require_artifact(dir / ("policy_" + variant_name(v) + ".bin"), "train-policy"));
  if (!(policy.shape() == c.policy_shape())) {
    throw ConfigError("policy checkpoint does not match the configured policy shape");
  }
  Manifest m("evaluate_" + variant_name(v), o, c);
  m.set("variant", variant_name(v));
  const SimEnv env(c.env_config());
  const auto report = evaluate_trained(c, env, model, policy);
  const auto baseline = evaluate_baseline(c, env, model);
  write_report(dir / ("eval_" + variant_name(v)), report, m);
  write_report(dir / "eval_uniform", baseline, m);
  m.write();
  std::cout << variant_name(v) << "\n" << report_table(report) << "uniform\n" << report_table(baseline);
}

std::string param_path(const std::string& p) {
  if (p == "G") return "drpo.group_size";
  if (p == "beta_H") return "drpo.entropy_coef";
  if (p == "alpha") return "satisfaction.alpha";
  return p;
}

std::vector<std::string> split_values(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  if (out.empty()) throw ConfigError("--values: expected a comma-separated list");
  return out;
}

void sweep_cmd(const Options& o) {
  if (o.param.empty()) throw ConfigError("sweep: --param is required");
  const Variant v = parse_variant(o.variant);
  const auto path = param_path(o.param);
  const auto values = split_values(o.values);
  const fs::path dir = fs::path(o.out_dir) / ("sweep_" + o.param);
  fs::create_directories(dir);

  // Validate every grid point before running any of them.
  std::vector<Config> configs;
  for (const auto& value : values) {
    std::vector<std::string> extra{path + "=" + value};
    if (o.fixed_budget > 0 && path == "drpo.group_size") {
      const auto g = std::stoull(value);
      if (g == 0 || o.fixed_budget % g != 0) {
        throw ConfigError("--fixed-budget " + std::to_string(o.fixed_budget) + " is not a multiple of G=" + value);
      }
      extra.push_back("drpo.batch_size=" + std::to_string(o.fixed_budget / g));
    }
    configs.push_back(apply_variant(resolve(o, extra), v));
    configs.back().validate();
  }

  Manifest m("sweep_" + o.param, o, configs.front());
  m.set("param", path);
  m.set("values", values);
  m.set("variant", variant_name(v));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto r = run_pipeline(configs[i], v);
    const auto stem = dir / ("value_" + values[i]);
    write_report(stem, r.report, m);
    auto trace = stem;
    trace += ".train.jsonl";
    write_file_atomic(trace, policy_trace(r.policy.trace));
    m.output(trace);
    std::cout << path << "=" << values[i] << ": composite " << r.report.composite_reward << "\n";
  }
  if (path == "satisfaction.alpha") {
    std::vector<double> alphas;
    for (const auto& value : values) alphas.push_back(std::stod(value));
    const Config& c = configs.front();
    const SimEnv env(c.env_config());
    const auto s = alpha_sensitivity(generate_logs(c, env), c.satisfaction, alphas);
    write_file_atomic(dir / "alpha_sensitivity.json", alpha_sensitivity_json(s).dump(2) + "\n");
    m.output(dir / "alpha_sensitivity.json");
  }
  m.write();
}

void report_cmd(const Options& o) {
  const fs::path dir(o.out_dir);
  if (!fs::is_directory(dir)) throw Error("report: no such directory " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (entry.is_regular_file() && entry.path().extension() == ".json" &&
        (name.rfind("eval_", 0) == 0 || name.rfind("value_", 0) == 0)) {
      files.push_back(entry.path());
    }
  }
  if (files.empty()) throw Error("report: no eval_*.json or sweep value_*.json files under " + dir.string());
  std::sort(files.begin(), files.end());

  std::vector<std::pair<std::string, EvalReport>> rows;
  for (const auto& f : files) {
    auto label = f.lexically_relative(dir);
    label.replace_extension();
    rows.emplace_back(label.generic_string(), report_from_json(Json::parse(read_file(f))));
  }
  const auto names = rows.front().second.metrics();
  std::string csv = "run,episodes";
  for (const auto& [name, value] : names) csv += "," + name;
  csv += "\n";
  std::size_t width = 3;
  for (const auto& [label, r] : rows) width = std::max(width, label.size());
  std::string text;
  char cell[64];
  std::snprintf(cell, sizeof cell, "%-*s", static_cast<int>(width), "run");
  text += cell;
  for (const auto& [name, value] : names) {
    std::snprintf(cell, sizeof cell, " %22s", name.c_str());
    text += cell;
  }
  text += "\n";
  for (const auto& [label, r] : rows) {
    csv += label + "," + std::to_string(r.episodes);
    std::snprintf(cell, sizeof cell, "%-*s", static_cast<int>(width), label.c_str());
    text += cell;
    for (const auto& [name, value] : r.metrics()) {
      std::snprintf(cell, sizeof cell, ",%.17g", value);
      csv += cell;
      std::snprintf(cell, sizeof cell, " %22.6f", value);
      text += cell;
    }
    csv += "\n";
    text += "\n";
  }
  write_file_atomic(dir / "report.csv", csv);
  write_file_atomic(dir / "report.txt", text);
  std::cout << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Satisfaction-aware multi-task fusion workbench"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON config file (defaults apply to missing keys)")
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Experiment seed (overrides the config)");
    sub->add_option("--out-dir", o.out_dir, "Directory for artifacts")->capture_default_str();
    sub->add_option("--jobs", o.jobs, "Thread cap for rollouts and evaluation");
    sub->add_option("--set", o.overrides, "Dotted-path override, e.g. drpo.group_size=16 (repeatable)");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate the logged episode pool");
  auto* rm = app.add_subcommand("train-reward-model", "Fit the satisfaction model on logged episodes");
  auto* tp = app.add_subcommand("train-policy", "Train a fusion policy with DRPO");
  auto* ev = app.add_subcommand("evaluate", "Evaluate a trained policy and the uniform baseline on held-out queries");
  auto* sw = app.add_subcommand("sweep", "Run the full pipeline for each value of one parameter");
  auto* rp = app.add_subcommand("report", "Merge metric files under --out-dir into comparison tables");
  for (auto* sub : {gen, rm, tp, ev, sw, rp}) common(sub);
  for (auto* sub : {tp, ev, sw}) {
    sub->add_option("--variant", o.variant, "full | no-sat | no-batch-adv | no-traf")->capture_default_str();
  }
  sw->add_option("--param", o.param, "G | beta_H | alpha | any dotted config path")->required();
  sw->add_option("--values", o.values, "Comma-separated values")->required();
  sw->add_option("--fixed-budget", o.fixed_budget, "With --param G: set batch_size = budget / G");

  CLI11_PARSE(app, argc, argv);
  try {
    if (gen->parsed()) gen_data(o);
    if (rm->parsed()) train_reward(o);
    if (tp->parsed()) train_policy_cmd(o);
    if (ev->parsed()) evaluate_cmd(o);
    if (sw->parsed()) sweep_cmd(o);
    if (rp->parsed()) report_cmd(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
