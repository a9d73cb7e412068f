#ifndef SAFRO_CONFIG_HPP_
#define SAFRO_CONFIG_HPP_

// Experiment configuration: one JSON document with a section per module.
// Files are merged over the defaults, dotted-path overrides are applied on
// top, and the result is parsed strictly (unknown keys are errors) and
// validated before anything runs.
//
// Schema (defaults in parentheses; * marks the method's tuned
// optima, everything else is an artifact default):
//
//   seed (0)
//   env.*              see EnvConfig
//   satisfaction.gap_quantile (0.6)*, stability (1), temperature (1), alpha (0.5)*
//   reward.click_weight (1), long_play_weight (2), ndcg_cutoff (10),
//          relevance_threshold (0.3), relevance_top_k (3), tolerance (0.01)
//   reward_model.hidden ([32]), positions (10), click_task (0), learning_rate (0.05),
//          momentum (0.9), epochs (60), batch_size (64)
//   policy.bins (5), w_min (0.05), w_max (0.45), hidden (32), layers (2),
//          relation_dim (8), traf (true), feasibility ("soft" | "hard")
//   drpo.group_size (32)*, batch_size (16), clip (0.2), entropy_coef (0.05)*,
//          epochs (4), optimizer ("sgd" | "adam"), learning_rate (0.05), momentum (0),
//          std_floor (1e-8), max_grad_norm (0), advantage ("dual" | "group_only"),
//          iterations (200), jobs (1)
//   run.engagement_feedback ("expected" | "sampled"), checkpoint_every (50),
//          logging_weights ("random" | "uniform")

#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "safro/core.hpp"
#include "safro/drpo.hpp"
#include "safro/io.hpp"
#include "safro/policy.hpp"
#include "safro/reward.hpp"
#include "safro/satisfaction.hpp"
#include "safro/simenv.hpp"
#include "safro/task.hpp"

namespace safro {

struct RewardModelConfig {
  std::vector<std::size_t> hidden{32};
  ListFeatureSchema schema;
  RewardTrainConfig train;

  void validate() const {
    if (hidden.empty()) throw ConfigError("reward_model.hidden: expected at least one hidden layer");
    for (auto h : hidden) {
      if (h < 1) throw ConfigError("reward_model.hidden: expected widths >= 1");
    }
    if (schema.positions < 1) throw ConfigError("reward_model.positions: expected value >= 1");
    train.validate();
  }
};

struct PolicyConfig {
  std::size_t bins = 5;
  double w_min = 0.05;
  double w_max = 0.45;
  std::size_t hidden = 32;
  std::size_t layers = 2;
  std::size_t relation_dim = 8;
  bool traf = true;
  FeasibilityMode feasibility = FeasibilityMode::soft;

  void validate() const {
    if (bins < 2) throw ConfigError("policy.bins: expected value >= 2");
    if (!(w_min >= 0.0 && w_min < w_max)) throw ConfigError("policy.w_min/w_max: expected 0 <= w_min < w_max");
    if (hidden < 1 || layers < 1 || relation_dim < 1) {
      throw ConfigError("policy.hidden/layers/relation_dim: expected values >= 1");
    }
  }
};

struct RunConfig {
  EngagementFeedback engagement_feedback = EngagementFeedback::expected;
  std::size_t checkpoint_every = 50;  // 0 disables intermediate checkpoints
  bool random_logging = true;         // logged weights drawn at random, else uniform
};

struct Config {
  std::uint64_t seed = 0;
  EnvConfig env;
  SatConfig satisfaction;
  RewardConfig reward;
  RewardModelConfig reward_model;
  PolicyConfig policy;
  DrpoConfig drpo;
  RunConfig run;

  void validate() const {
    env.validate();
    satisfaction.validate();
    reward.validate();
    reward_model.validate();
    policy.validate();
    drpo.validate();
    if (reward_model.schema.click_task >= env.tasks) {
      throw ConfigError("reward_model.click_task: expected value < env.tasks");
    }
    if (policy.w_min * static_cast<double>(env.tasks) > 1.0 + reward.tolerance ||
        policy.w_max * static_cast<double>(env.tasks) < 1.0 - reward.tolerance) {
      throw ConfigError("policy.w_min/w_max: no weight vector in the grid can sum to 1");
    }
  }

  /// Env config with the experiment seed applied.
  EnvConfig env_config() const {
    EnvConfig e = env;
    e.seed = seed;
    return e;
  }

  ActionSpace action_space() const {
    return ActionSpace::uniform_grid(env.tasks, policy.bins, policy.w_min, policy.w_max, reward.tolerance);
  }

  PolicyShape policy_shape() const {
    PolicyShape s;
    s.input_dim = env.state_dim();
    s.hidden = policy.hidden;
    s.layers = policy.layers;
    s.relation_dim = policy.relation_dim;
    s.traf = policy.traf;
    return s;
  }

  RewardModelShape reward_model_shape() const {
    RewardModelShape s;
    s.context_dim = env.state_dim();
    s.hidden = reward_model.hidden;
    s.schema = reward_model.schema;
    return s;
  }
};

/*
 * JSON
 */

namespace detail {

// Reads known keys from one section and rejects any others.
class SectionReader {
 public:
  SectionReader(const Json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j_.is_object()) throw ConfigError(section_ + ": expected an object");
  }

  template <typename T>
  void operator()(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const Json::exception& e) {
      throw ConfigError(section_ + "." + key + ": " + e.what());
    }
  }

  template <typename T>
  void choice(const char* key, T& out, std::initializer_list<std::pair<const char*, T>> options) {
    std::string name;
    (*this)(key, name);
    if (name.empty()) return;
    std::string expected;
    for (const auto& [label, value] : options) {
      if (name == label) {
        out = value;
        return;
      }
      expected += expected.empty() ? label : std::string(" | ") + label;
    }
    throw ConfigError(section_ + "." + key + ": expected one of " + expected + ", got '" + name + "'");
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(section_ + "." + key + ": unknown key");
    }
  }

 private:
  const Json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline OrderedJson config_json(const Config& c) {
  OrderedJson j;
  j["seed"] = c.seed;
  const auto& e = c.env;
  j["env"] = {{"users", e.users},
              {"queries_per_user", e.queries_per_user},
              {"heldout_queries", e.heldout_queries},
              {"candidates", e.candidates},
              {"tasks", e.tasks},
              {"score_scales", e.score_scales},
              {"quality_mix", e.quality_mix},
              {"score_noise", e.score_noise},
              {"noise_spread_min", e.noise_spread_min},
              {"noise_spread_max", e.noise_spread_max},
              {"query_heterogeneity", e.query_heterogeneity},
              {"relevance_floor", e.relevance_floor},
              {"relevance_power", e.relevance_power},
              {"click_floor", e.click_floor},
              {"click_steepness", e.click_steepness},
              {"click_quality_weight", e.click_quality_weight},
              {"intent_spread", e.intent_spread},
              {"click_center", e.click_center},
              {"long_play_steepness", e.long_play_steepness},
              {"long_play_center", e.long_play_center},
              {"duration_base", e.duration_base},
              {"utility_top_k", e.utility_top_k},
              {"utility_quality_weight", e.utility_quality_weight},
              {"reform_steepness", e.reform_steepness},
              {"utility_threshold", e.utility_threshold},
              {"gap_sensitivity", e.gap_sensitivity},
              {"gap_noise", e.gap_noise},
              {"retention_base", e.retention_base},
              {"retention_sensitivity", e.retention_sensitivity},
              {"retention_activity_effect", e.retention_activity_effect},
              {"base_gap", e.base_gap},
              {"gap_history_spread", e.gap_history_spread},
              {"history_length", e.history_length},
              {"gap_quantile", e.gap_quantile},
              {"future_trials", e.future_trials}};
  j["satisfaction"] = {{"gap_quantile", c.satisfaction.gap_quantile},
                       {"stability", c.satisfaction.stability},
                       {"temperature", c.satisfaction.temperature},
                       {"alpha", c.satisfaction.alpha}};
  j["reward"] = {{"click_weight", c.reward.click_weight},
                 {"long_play_weight", c.reward.long_play_weight},
                 {"ndcg_cutoff", c.reward.ndcg_cutoff},
                 {"relevance_threshold", c.reward.relevance_threshold},
                 {"relevance_top_k", c.reward.relevance_top_k},
                 {"tolerance", c.reward.tolerance}};
  j["reward_model"] = {{"hidden", c.reward_model.hidden},
                       {"positions", c.reward_model.schema.positions},
                       {"click_task", c.reward_model.schema.click_task},
                       {"learning_rate", c.reward_model.train.learning_rate},
                       {"momentum", c.reward_model.train.momentum},
                       {"epochs", c.reward_model.train.epochs},
                       {"batch_size", c.reward_model.train.batch_size}};
  j["policy"] = {{"bins", c.policy.bins},
                 {"w_min", c.policy.w_min},
                 {"w_max", c.policy.w_max},
                 {"hidden", c.policy.hidden},
                 {"layers", c.policy.layers},
                 {"relation_dim", c.policy.relation_dim},
                 {"traf", c.policy.traf},
                 {"feasibility", c.policy.feasibility == FeasibilityMode::hard ? "hard" : "soft"}};
  const auto& d = c.drpo;
  j["drpo"] = {{"group_size", d.group_size},
               {"batch_size", d.batch_size},
               {"clip", d.clip},
               {"entropy_coef", d.entropy_coef},
               {"epochs", d.epochs},
               {"learning_rate", d.learning_rate},
               {"momentum", d.momentum},
               {"optimizer", d.optimizer == Optimizer::adam ? "adam" : "sgd"},
               {"std_floor", d.std_floor},
               {"max_grad_norm", d.max_grad_norm},
               {"advantage", d.mode == AdvantageMode::dual ? "dual" : "group_only"},
               {"iterations", d.iterations},
               {"jobs", d.jobs}};
  j["run"] = {{"engagement_feedback", c.run.engagement_feedback == EngagementFeedback::expected ? "expected" : "sampled"},
              {"checkpoint_every", c.run.checkpoint_every},
              {"logging_weights", c.run.random_logging ? "random" : "uniform"}};
  return j;
}

/// Strict parse; does not validate ranges.
inline Config config_from_json(const Json& j) {
  Config c;
  detail::SectionReader top(j, "config");
  top("seed", c.seed);
  const Json empty = Json::object();
  auto section = [&](const char* name) -> const Json& {
    return j.contains(name) ? j.at(name) : empty;
  };
  for (const char* name : {"env", "satisfaction", "reward", "reward_model", "policy", "drpo", "run"}) {
    Json ignored;  // parsed below; only marks the key as known
    top(name, ignored);
  }
  top.finish();

  {
    auto& e = c.env;
    detail::SectionReader r(section("env"), "env");
    r("users", e.users);
    r("queries_per_user", e.queries_per_user);
    r("heldout_queries", e.heldout_queries);
    r("candidates", e.candidates);
    r("tasks", e.tasks);
    r("score_scales", e.score_scales);
    r("quality_mix", e.quality_mix);
    r("score_noise", e.score_noise);
    r("noise_spread_min", e.noise_spread_min);
    r("noise_spread_max", e.noise_spread_max);
    r("query_heterogeneity", e.query_heterogeneity);
    r("relevance_floor", e.relevance_floor);
    r("relevance_power", e.relevance_power);
    r("click_floor", e.click_floor);
    r("click_steepness", e.click_steepness);
    r("click_quality_weight", e.click_quality_weight);
    r("intent_spread", e.intent_spread);
    r("click_center", e.click_center);
    r("long_play_steepness", e.long_play_steepness);
    r("long_play_center", e.long_play_center);
    r("duration_base", e.duration_base);
    r("utility_top_k", e.utility_top_k);
    r("utility_quality_weight", e.utility_quality_weight);
    r("reform_steepness", e.reform_steepness);
    r("utility_threshold", e.utility_threshold);
    r("gap_sensitivity", e.gap_sensitivity);
    r("gap_noise", e.gap_noise);
    r("retention_base", e.retention_base);
    r("retention_sensitivity", e.retention_sensitivity);
    r("retention_activity_effect", e.retention_activity_effect);
    r("base_gap", e.base_gap);
    r("gap_history_spread", e.gap_history_spread);
    r("history_length", e.history_length);
    r("gap_quantile", e.gap_quantile);
    r("future_trials", e.future_trials);
    r.finish();
  }
  {
    detail::SectionReader r(section("satisfaction"), "satisfaction");
    r("gap_quantile", c.satisfaction.gap_quantile);
    r("stability", c.satisfaction.stability);
    r("temperature", c.satisfaction.temperature);
    r("alpha", c.satisfaction.alpha);
    r.finish();
  }
  {
    detail::SectionReader r(section("reward"), "reward");
    r("click_weight", c.reward.click_weight);
    r("long_play_weight", c.reward.long_play_weight);
    r("ndcg_cutoff", c.reward.ndcg_cutoff);
    r("relevance_threshold", c.reward.relevance_threshold);
    r("relevance_top_k", c.reward.relevance_top_k);
    r("tolerance", c.reward.tolerance);
    r.finish();
  }
  {
    auto& m = c.reward_model;
    detail::SectionReader r(section("reward_model"), "reward_model");
    r("hidden", m.hidden);
    r("positions", m.schema.positions);
    r("click_task", m.schema.click_task);
    r("learning_rate", m.train.learning_rate);
    r("momentum", m.train.momentum);
    r("epochs", m.train.epochs);
    r("batch_size", m.train.batch_size);
    r.finish();
  }
  {
    auto& p = c.policy;
    detail::SectionReader r(section("policy"), "policy");
    r("bins", p.bins);
    r("w_min", p.w_min);
    r("w_max", p.w_max);
    r("hidden", p.hidden);
    r("layers", p.layers);
    r("relation_dim", p.relation_dim);
    r("traf", p.traf);
    r.choice("feasibility", p.feasibility, {{"soft", FeasibilityMode::soft}, {"hard", FeasibilityMode::hard}});
    r.finish();
  }
  {
    auto& d = c.drpo;
    detail::SectionReader r(section("drpo"), "drpo");
    r("group_size", d.group_size);
    r("batch_size", d.batch_size);
    r("clip", d.clip);
    r("entropy_coef", d.entropy_coef);
    r("epochs", d.epochs);
    r("learning_rate", d.learning_rate);
    r("momentum", d.momentum);
    r.choice("optimizer", d.optimizer, {{"sgd", Optimizer::sgd}, {"adam", Optimizer::adam}});
    r("std_floor", d.std_floor);
    r("max_grad_norm", d.max_grad_norm);
    r.choice("advantage", d.mode, {{"dual", AdvantageMode::dual}, {"group_only", AdvantageMode::group_only}});
    r("iterations", d.iterations);
    r("jobs", d.jobs);
    r.finish();
  }
  {
    detail::SectionReader r(section("run"), "run");
    r.choice("engagement_feedback", c.run.engagement_feedback,
             {{"expected", EngagementFeedback::expected}, {"sampled", EngagementFeedback::sampled}});
    r("checkpoint_every", c.run.checkpoint_every);
    r.choice("logging_weights", c.run.random_logging, {{"random", true}, {"uniform", false}});
    r.finish();
  }
  return c;
}

/// Sets one leaf addressed by a dotted path. The path must already exist;
/// the value is parsed as JSON, falling back to a plain string.
inline void apply_override(Json& root, std::string_view path, std::string_view value) {
  Json* node = &root;
  std::size_t start = 0;
  std::string full(path);
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key(path.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start));
    if (!node->is_object() || !node->contains(key)) throw ConfigError(full + ": unknown config path");
    node = &(*node)[key];
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw ConfigError(full + ": cannot override a whole section");
  Json parsed = Json::parse(value, nullptr, /*allow_exceptions=*/false);
  *node = parsed.is_discarded() ? Json(std::string(value)) : parsed;
}

/// "path=value" form, as given on the command line.
inline void apply_override(Json& root, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "': expected path=value");
  }
  apply_override(root, assignment.substr(0, eq), assignment.substr(eq + 1));
}

/// Defaults, then `file_json` merged on top, then overrides; parsed and validated.
inline Config resolve_config(const Json& file_json, const std::vector<std::string>& overrides = {}) {
  Json merged = Json::parse(config_json(Config{}).dump());
  if (!file_json.is_null()) {
    if (!file_json.is_object()) throw ConfigError("config: expected a JSON object at the top level");
    merged.merge_patch(file_json);
  }
  for (const auto& o : overrides) apply_override(merged, o);
  Config c = config_from_json(merged);
  c.validate();
  return c;
}

inline Config load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return resolve_config(j, overrides);
}

/// FNV-1a of the canonical JSON form.
inline std::uint64_t config_hash(const Config& c) { return detail::fnv1a(config_json(c).dump()); }

}  // namespace safro

#endif  // SAFRO_CONFIG_HPP_
