#ifndef SAFRO_REWARD_HPP_
#define SAFRO_REWARD_HPP_

// Composite reward r = r_eng + r_sat + r_fmt^a + r_fmt^r.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "safro/core.hpp"
#include "safro/fusion.hpp"

namespace safro {

struct RewardConfig {
  double click_weight = 1.0;
  double long_play_weight = 2.0;
  std::size_t ndcg_cutoff = 10;
  double relevance_threshold = 0.3;  // tau
  std::size_t relevance_top_k = 3;
  double tolerance = 0.01;  // xi, shared with the action space

  void validate() const {
    if (!(click_weight >= 0.0)) throw ConfigError("reward.click_weight: expected value >= 0");
    if (!(long_play_weight >= 0.0)) throw ConfigError("reward.long_play_weight: expected value >= 0");
    if (ndcg_cutoff < 1) throw ConfigError("reward.ndcg_cutoff: expected value >= 1");
    if (!(relevance_threshold > 0.0 && relevance_threshold < 1.0)) {
      throw ConfigError("reward.relevance_threshold: expected value in (0, 1)");
    }
    if (relevance_top_k < 1) throw ConfigError("reward.relevance_top_k: expected value >= 1");
    if (!(tolerance > 0.0)) throw ConfigError("reward.tolerance: expected value > 0");
  }
};

/// Position discount 1 / log2(pos + 1) for 1-based positions.
inline double position_discount(std::size_t position) {
  return 1.0 / std::log2(static_cast<double>(position) + 1.0);
}

/// NDCG at `cutoff` of the ranking against per-candidate gains; 0 when the
/// ideal DCG is 0.
inline double ndcg_at(const RankedList& list, std::span<const double> gains, std::size_t cutoff) {
  require_dim(gains.size(), list.order.size(), "ndcg_at gains");
  if (cutoff < 1) throw DomainError("ndcg_at: cutoff must be >= 1");
  const std::size_t depth = std::min(cutoff, gains.size());
  double dcg = 0.0;
  for (std::size_t p = 0; p < depth; ++p) dcg += gains[list.order[p]] * position_discount(p + 1);
  std::vector<double> ideal(gains.begin(), gains.end());
  std::partial_sort(ideal.begin(), ideal.begin() + static_cast<std::ptrdiff_t>(depth), ideal.end(),
                    std::greater<>());
  double idcg = 0.0;
  for (std::size_t p = 0; p < depth; ++p) idcg += ideal[p] * position_discount(p + 1);
  if (!(idcg > 0.0)) return 0.0;
  return dcg / idcg;
}

inline double engagement_gain(double click, double long_play, const RewardConfig& cfg) {
  return cfg.click_weight * click + cfg.long_play_weight * long_play;
}

/// NDCG-style engagement reward over click / long-play gains.
inline double engagement_reward(const RankedList& list, std::span<const ItemFeedback> feedback,
                                const RewardConfig& cfg) {
  if (feedback.size() != list.order.size()) throw DimensionError("engagement_reward: misaligned feedback");
  std::vector<double> gains(feedback.size());
  for (std::size_t n = 0; n < feedback.size(); ++n) {
    gains[n] = engagement_gain(feedback[n].click, feedback[n].long_play, cfg);
  }
  return ndcg_at(list, gains, cfg.ndcg_cutoff);
}

/// Same reward from precomputed per-candidate gains (e.g. expected gains).
inline double engagement_reward_from_gains(const RankedList& list, std::span<const double> gains,
                                           const RewardConfig& cfg) {
  if (gains.size() != list.order.size()) throw DimensionError("engagement_reward: misaligned gains");
  return ndcg_at(list, gains, cfg.ndcg_cutoff);
}

/// 0 when |sum w - 1| <= xi, otherwise -1.
inline double format_action_reward(const FusionAction& a, double tolerance) {
  return is_feasible(a, tolerance) ? 0.0 : -1.0;
}

/// -2 when any of the first min(k, n) ranked items has relevance < tau, otherwise 0.
inline double format_relevance_reward(const RankedList& list, std::span<const double> relevance,
                                      double threshold, std::size_t top_k) {
  if (top_k < 1) throw DomainError("format_relevance_reward: k must be >= 1");
  require_dim(relevance.size(), list.order.size(), "format_relevance_reward relevance");
  const std::size_t depth = std::min(top_k, list.order.size());
  for (std::size_t p = 0; p < depth; ++p) {
    if (relevance[list.order[p]] < threshold) return -2.0;
  }
  return 0.0;
}

inline double composite_reward(double engagement, double satisfaction, double format_action,
                               double format_relevance) {
  return engagement + satisfaction + format_action + format_relevance;
}

struct RewardBreakdown {
  double engagement = 0.0;
  double satisfaction = 0.0;
  double format_action = 0.0;
  double format_relevance = 0.0;

  double total() const { return composite_reward(engagement, satisfaction, format_action, format_relevance); }
};

}  // namespace safro

#endif  // SAFRO_REWARD_HPP_
