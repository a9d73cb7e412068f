#ifndef SAFRO_TASK_HPP_
#define SAFRO_TASK_HPP_

// Binds a simulated query pool, the reward configuration and an optional
// satisfaction model into a PolicyEnvironment for training and evaluation.

#include <span>
#include <string>
#include <vector>

#include "safro/core.hpp"
#include "safro/fusion.hpp"
#include "safro/reward.hpp"
#include "safro/satisfaction.hpp"
#include "safro/simenv.hpp"

namespace safro {

// How r_eng scores a counterfactual ranking: NDCG over the environment's
// per-item expected gains, or over one realized feedback draw.
enum class EngagementFeedback { expected, sampled };

struct TaskOptions {
  RewardConfig reward;
  bool use_satisfaction = true;
  EngagementFeedback feedback = EngagementFeedback::expected;
};

class FusionTask {
 public:
  FusionTask(const SimEnv& env, std::string split, const RewardModel* model, TaskOptions options)
      : env_(&env), split_(std::move(split)), model_(model), options_(std::move(options)) {
    options_.reward.validate();
    env_->pool(split_);  // validates the split name
    if (options_.use_satisfaction && model_ == nullptr) {
      throw ConfigError("fusion task: satisfaction reward requested without a reward model");
    }
  }

  std::size_t size() const { return pool().size(); }
  std::span<const double> state(std::size_t i) const { return pool()[i].state_features; }
  const QueryContext& query(std::size_t i) const { return pool()[i]; }
  const SimEnv& env() const { return *env_; }
  const RewardModel* model() const { return model_; }
  const TaskOptions& options() const { return options_; }

  static std::vector<double> relevance_labels(const QueryContext& q) {
    std::vector<double> rel(q.candidates.size());
    for (std::size_t n = 0; n < rel.size(); ++n) rel[n] = q.candidates[n].relevance;
    return rel;
  }

  /// Predicted satisfaction of showing `ranking` for query q.
  double satisfaction(const QueryContext& q, const RankedList& ranking) const {
    if (model_ == nullptr) throw ConfigError("fusion task: no reward model");
    const auto rel = relevance_labels(q);
    const auto feats = list_features(q.candidates, ranking, rel, model_->shape().schema);
    return predict_satisfaction(*model_, q.state_features, feats);
  }

  RewardBreakdown score(const QueryContext& q, const FusionAction& a, const RankedList& ranking,
                        SeededRng& rng) const {
    const auto& rc = options_.reward;
    RewardBreakdown r;
    if (options_.feedback == EngagementFeedback::expected) {
      const auto gains = env_->expected_gains(q, rc.click_weight, rc.long_play_weight);
      r.engagement = engagement_reward_from_gains(ranking, gains, rc);
    } else {
      const auto fb = env_->realize_feedback(q, ranking, rng.split("feedback"));
      r.engagement = engagement_reward(ranking, fb, rc);
    }
    if (options_.use_satisfaction) r.satisfaction = satisfaction(q, ranking);
    r.format_action = format_action_reward(a, rc.tolerance);
    const auto rel = relevance_labels(q);
    r.format_relevance = format_relevance_reward(ranking, rel, rc.relevance_threshold, rc.relevance_top_k);
    return r;
  }

  RewardBreakdown reward(std::size_t i, const FusionAction& a, SeededRng& rng) const {
    const auto& q = query(i);
    return score(q, a, rank(q.candidates, a.weights), rng);
  }

 private:
  const std::vector<QueryContext>& pool() const { return env_->pool(split_); }

  const SimEnv* env_;
  std::string split_;
  const RewardModel* model_;
  TaskOptions options_;
};

}  // namespace safro

#endif  // SAFRO_TASK_HPP_
