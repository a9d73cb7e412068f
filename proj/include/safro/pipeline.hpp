#ifndef SAFRO_PIPELINE_HPP_
#define SAFRO_PIPELINE_HPP_

// End-to-end stages shared by the command-line runner and the tests:
// logged data -> satisfaction model -> DRPO policy -> held-out evaluation.
// Every stage draws from its own labelled substream of the experiment seed.

#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "safro/config.hpp"
#include "safro/core.hpp"
#include "safro/drpo.hpp"
#include "safro/eval.hpp"
#include "safro/policy.hpp"
#include "safro/satisfaction.hpp"
#include "safro/simenv.hpp"
#include "safro/task.hpp"

namespace safro {

enum class Variant { full, no_sat, no_batch_adv, no_traf };

inline Variant parse_variant(std::string_view name) {
  if (name == "full") return Variant::full;
  if (name == "no-sat") return Variant::no_sat;
  if (name == "no-batch-adv") return Variant::no_batch_adv;
  if (name == "no-traf") return Variant::no_traf;
  throw ConfigError("variant: expected one of full | no-sat | no-batch-adv | no-traf, got '" + std::string(name) + "'");
}

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_sat: return "no-sat";
    case Variant::no_batch_adv: return "no-batch-adv";
    case Variant::no_traf: return "no-traf";
  }
  return "full";
}

/// Config with the variant's switches applied. no-sat is a training-reward
/// switch and is handled by training_options().
inline Config apply_variant(Config c, Variant v) {
  if (v == Variant::no_batch_adv) c.drpo.mode = AdvantageMode::group_only;
  if (v == Variant::no_traf) c.policy.traf = false;
  return c;
}

inline TaskOptions task_options(const Config& c, bool use_satisfaction = true) {
  TaskOptions o;
  o.reward = c.reward;
  o.use_satisfaction = use_satisfaction;
  o.feedback = c.run.engagement_feedback;
  return o;
}

inline TaskOptions training_options(const Config& c, Variant v) { return task_options(c, v != Variant::no_sat); }

inline SeededRng stage_rng(const Config& c, std::string_view stage) { return SeededRng(c.seed).split(stage); }

/*
 * Logged data
 */

/// One logged impression per training query, ranked with logging weights
/// (random points on the simplex, or uniform).
inline std::vector<QueryEpisode> generate_logs(const Config& c, const SimEnv& env) {
  const auto rng = stage_rng(c, "logging");
  const auto& pool = env.train_pool();
  const std::size_t k = c.env.tasks;
  std::vector<QueryEpisode> logs(pool.size());
  parallel_for(pool.size(), c.drpo.jobs, [&](std::size_t i) {
    auto q_rng = rng.split("query", i);
    auto w_rng = q_rng.split("weights");
    std::vector<double> w(k, 1.0 / static_cast<double>(k));
    if (c.run.random_logging) {
      double sum = 0.0;
      for (double& v : w) {
        v = -std::log(1.0 - w_rng.uniform());
        sum += v;
      }
      for (double& v : w) v /= sum;
    }
    logs[i] = env.log_episode(pool[i], w, q_rng.split("impression"));
  });
  return logs;
}

/*
 * Satisfaction model
 */

inline RewardTrainResult fit_reward_model(const Config& c, const std::vector<QueryEpisode>& logs) {
  const auto rng = stage_rng(c, "reward_model");
  const auto samples = reward_samples(logs, c.satisfaction, c.reward_model.schema);
  auto model = RewardModel::initialized(c.reward_model_shape(), rng.split("init"));
  return train_reward_model(std::move(model), samples, c.reward_model.train, rng.split("train"));
}

/*
 * Policy
 */

inline Policy initial_policy(const Config& c) {
  return Policy::initialized(c.policy_shape(), c.action_space(), c.policy.feasibility, stage_rng(c, "policy").split("init"));
}

/// Trains the variant's policy. `c` must already have the variant applied.
inline TrainResult fit_policy(const Config& c, Variant v, const SimEnv& env, const RewardModel& model,
                              const std::function<void(const IterationMetrics&, const Policy&)>& on_iteration = {}) {
  const FusionTask task(env, "train", &model, training_options(c, v));
  return train(task, initial_policy(c), c.drpo, stage_rng(c, "policy").split("train"), on_iteration);
}

inline FusionTask evaluation_task(const Config& c, const SimEnv& env, const RewardModel& model) {
  return FusionTask(env, "heldout", &model, task_options(c));
}

inline EvalReport evaluate_trained(const Config& c, const SimEnv& env, const RewardModel& model, const Policy& policy) {
  return evaluate_policy(policy, evaluation_task(c, env, model), stage_rng(c, "eval"), c.drpo.jobs);
}

inline EvalReport evaluate_baseline(const Config& c, const SimEnv& env, const RewardModel& model) {
  return evaluate_uniform(evaluation_task(c, env, model), stage_rng(c, "eval"), c.drpo.jobs);
}

/*
 * Whole pipeline in memory
 */

struct PipelineResult {
  Config config;  // variant applied
  std::vector<QueryEpisode> logs;
  RewardTrainResult reward_model;
  TrainResult policy;
  EvalReport report;
  EvalReport baseline;
};

inline PipelineResult run_pipeline(const Config& base, Variant v) {
  PipelineResult r;
  r.config = apply_variant(base, v);
  r.config.validate();
  const SimEnv env(r.config.env_config());
  r.logs = generate_logs(r.config, env);
  r.reward_model = fit_reward_model(r.config, r.logs);
  r.policy = fit_policy(r.config, v, env, r.reward_model.model);
  r.report = evaluate_trained(r.config, env, r.reward_model.model, r.policy.policy);
  r.baseline = evaluate_baseline(r.config, env, r.reward_model.model);
  return r;
}

}  // namespace safro

#endif  // SAFRO_PIPELINE_HPP_
