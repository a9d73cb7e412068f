#ifndef SAFRO_SIMENV_HPP_
#define SAFRO_SIMENV_HPP_

// Deterministic synthetic short-video search environment.
//
// Users carry an activity level, a session-gap history and a retention
// propensity. Each query draws N candidates with latent relevance and quality
// in [0, 1]; the upstream predictions s_nj are noisy increasing functions of a
// per-task mix of the two latents, scaled per task. Per-query prediction noise
// differs by task and is visible in the state features, so the best fusion
// weights depend on the query.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "safro/core.hpp"
#include "safro/fusion.hpp"
#include "safro/satisfaction.hpp"

namespace safro {

struct EnvConfig {
  std::size_t users = 200;
  std::size_t queries_per_user = 10;  // training pool = users * queries_per_user
  std::size_t heldout_queries = 500;
  std::size_t candidates = 20;        // N
  std::size_t tasks = 4;              // k

  // Upstream predictions.
  std::vector<double> score_scales{0.5, 2.0, 1.0, 60.0};
  std::vector<double> quality_mix{0.4, 1.0, 0.0, 0.8};  // driver_j = q*qm_j + r*(1 - qm_j)
  double score_noise = 0.3;
  double noise_spread_min = 0.1;  // per-query task noise multiplier range
  double noise_spread_max = 2.0;
  double query_heterogeneity = 0.6;  // spread of per-query candidate quality
  double relevance_floor = 0.55;     // per-query relevance level ~ U[floor, 1]
  double relevance_power = 0.7;      // candidate relevance = level * U^power

  // Examination / feedback.
  double click_floor = 0.02;
  double click_steepness = 6.0;
  double click_quality_weight = 0.7;  // mean per-query intent cq; attractiveness driver = cq*q + (1 - cq)*r
  double intent_spread = 0.5;         // per-query cq ~ U[cq - spread, cq + spread], clamped to [0, 1]
  double click_center = 0.5;
  double long_play_steepness = 6.0;
  double long_play_center = 0.5;
  double duration_base = 30.0;  // seconds

  // Query-level outcomes.
  std::size_t utility_top_k = 10;
  double utility_quality_weight = 0.3;  // item value = r * ((1 - w) + w * q)
  double reform_steepness = 10.0;      // theta_r
  double utility_threshold = 0.3;      // u_thresh
  double gap_sensitivity = 3.0;        // theta_g
  double gap_noise = 0.3;
  double retention_base = -2.0;
  double retention_sensitivity = 5.0;  // theta_ret
  double retention_activity_effect = 1.0;

  // Session-gap history.
  double base_gap = 3600.0;  // seconds
  double gap_history_spread = 0.5;
  std::size_t history_length = 30;
  double gap_quantile = 0.6;

  // Follow-up window used for sample confidence.
  std::size_t future_trials = 6;

  std::uint64_t seed = 0;

  std::size_t state_dim() const { return 3 + 3 * tasks; }

  double task_scale(std::size_t j) const { return score_scales[j % score_scales.size()]; }
  double task_quality_mix(std::size_t j) const { return quality_mix[j % quality_mix.size()]; }

  void validate() const {
    if (candidates < 2) throw ConfigError("env.candidates: expected value >= 2");
    if (tasks < 2) throw ConfigError("env.tasks: expected value >= 2");
    if (users < 1) throw ConfigError("env.users: expected value >= 1");
    if (queries_per_user < 1) throw ConfigError("env.queries_per_user: expected value >= 1");
    if (score_scales.empty() || quality_mix.empty()) throw ConfigError("env.score_scales / env.quality_mix: expected non-empty lists");
    for (double s : score_scales) {
      if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("env.score_scales: expected finite values > 0");
    }
    for (double m : quality_mix) {
      if (!(m >= 0.0 && m <= 1.0)) throw ConfigError("env.quality_mix: expected values in [0, 1]");
    }
    if (!(score_noise >= 0.0)) throw ConfigError("env.score_noise: expected value >= 0");
    if (!(noise_spread_min >= 0.0 && noise_spread_min <= noise_spread_max)) {
      throw ConfigError("env.noise_spread_min/max: expected 0 <= min <= max");
    }
    if (!(query_heterogeneity >= 0.0 && query_heterogeneity < 1.0)) {
      throw ConfigError("env.query_heterogeneity: expected value in [0, 1)");
    }
    if (!(relevance_floor >= 0.0 && relevance_floor <= 1.0)) throw ConfigError("env.relevance_floor: expected value in [0, 1]");
    if (!(relevance_power > 0.0)) throw ConfigError("env.relevance_power: expected value > 0");
    if (!(click_floor >= 0.0 && click_floor < 1.0)) throw ConfigError("env.click_floor: expected value in [0, 1)");
    if (!(click_quality_weight >= 0.0 && click_quality_weight <= 1.0)) {
      throw ConfigError("env.click_quality_weight: expected value in [0, 1]");
    }
    if (!(intent_spread >= 0.0 && intent_spread <= 1.0)) throw ConfigError("env.intent_spread: expected value in [0, 1]");
    if (utility_top_k < 1) throw ConfigError("env.utility_top_k: expected value >= 1");
    if (!(utility_quality_weight >= 0.0 && utility_quality_weight <= 1.0)) {
      throw ConfigError("env.utility_quality_weight: expected value in [0, 1]");
    }
    for (double v : {click_steepness, long_play_steepness, reform_steepness, gap_sensitivity,
                     retention_sensitivity, retention_base, retention_activity_effect, utility_threshold}) {
      if (!std::isfinite(v)) throw ConfigError("env: outcome sensitivities must be finite");
    }
    if (!(gap_noise >= 0.0)) throw ConfigError("env.gap_noise: expected value >= 0");
    if (!(base_gap > 0.0)) throw ConfigError("env.base_gap: expected value > 0");
    if (history_length < 10) throw ConfigError("env.history_length: expected value >= 10");
    if (!(gap_quantile > 0.0 && gap_quantile < 1.0)) throw ConfigError("env.gap_quantile: expected value in (0, 1)");
    if (!(duration_base > 0.0)) throw ConfigError("env.duration_base: expected value > 0");
  }
};

struct UserProfile {
  double activity = 1.0;  // (0, 1]
  std::vector<double> gap_history;
  double gap_baseline = 1.0;  // mu_u
  double retention_logit = 0.0;
};

struct QueryContext {
  std::uint64_t query_id = 0;
  std::size_t user = 0;
  double difficulty = 0.0;
  double intent = 0.0;  // weight of quality (vs relevance) in the click model
  std::vector<double> task_noise;
  std::vector<double> state_features;
  std::vector<Candidate> candidates;
};

struct QueryOutcome {
  int reformulated = 0;
  double session_gap = 1.0;
  int retained = 0;
  double retention_probability = 0.0;
  double utility = 0.0;
  int future_clicks = 0;
  int future_long_plays = 0;
};

inline std::vector<UserProfile> generate_users(const EnvConfig& cfg, const SeededRng& root) {
  cfg.validate();
  std::vector<UserProfile> users(cfg.users);
  for (std::size_t u = 0; u < cfg.users; ++u) {
    auto rng = root.split("user", u);
    auto& p = users[u];
    p.activity = 0.1 + 0.9 * rng.uniform();
    const double typical = cfg.base_gap / p.activity;
    p.gap_history.resize(cfg.history_length);
    for (double& g : p.gap_history) g = typical * std::exp(cfg.gap_history_spread * rng.normal());
    p.gap_baseline = gap_baseline(p.gap_history, cfg.gap_quantile);
    p.retention_logit = cfg.retention_base + cfg.retention_activity_effect * (p.activity - 0.5);
  }
  return users;
}

/// Score of task j for one candidate before noise: scale_j * driver_j(q, r).
inline double task_driver(const EnvConfig& cfg, std::size_t j, double quality, double relevance) {
  const double m = cfg.task_quality_mix(j);
  return m * quality + (1.0 - m) * relevance;
}

inline QueryContext generate_query(const EnvConfig& cfg, const std::vector<UserProfile>& users,
                                   std::size_t user, std::uint64_t query_id, SeededRng rng) {
  QueryContext q;
  q.query_id = query_id;
  q.user = user;
  q.difficulty = rng.uniform();
  q.intent = std::clamp(cfg.click_quality_weight + cfg.intent_spread * (2.0 * rng.uniform() - 1.0), 0.0, 1.0);
  const double quality_level = 1.0 - cfg.query_heterogeneity * q.difficulty;
  const double relevance_level = cfg.relevance_floor + (1.0 - cfg.relevance_floor) * rng.uniform();
  q.task_noise.resize(cfg.tasks);
  for (auto& v : q.task_noise) v = cfg.score_noise * rng.uniform(cfg.noise_spread_min, cfg.noise_spread_max);

  q.candidates.reserve(cfg.candidates);
  for (std::size_t n = 0; n < cfg.candidates; ++n) {
    Candidate c;
    c.quality = std::clamp(quality_level * std::pow(rng.uniform(), 0.8), 0.0, 1.0);
    c.relevance = std::clamp(relevance_level * std::pow(rng.uniform(), cfg.relevance_power), 0.0, 1.0);
    std::vector<double> s(cfg.tasks);
    for (std::size_t j = 0; j < cfg.tasks; ++j) {
      const double sigma = q.task_noise[j];
      const double noise = std::exp(sigma * rng.normal() - 0.5 * sigma * sigma);
      s[j] = cfg.task_scale(j) * task_driver(cfg, j, c.quality, c.relevance) * noise;
    }
    c.scores = ScoreVector(std::move(s));
    q.candidates.push_back(std::move(c));
  }

  // [activity, difficulty, intent, noise_j..., mean log1p s_j..., std log1p s_j...]
  q.state_features.reserve(cfg.state_dim());
  q.state_features.push_back(users[user].activity);
  q.state_features.push_back(q.difficulty);
  q.state_features.push_back(q.intent);
  for (double v : q.task_noise) q.state_features.push_back(v);
  std::vector<double> mean(cfg.tasks, 0.0), sq(cfg.tasks, 0.0);
  for (const auto& c : q.candidates) {
    for (std::size_t j = 0; j < cfg.tasks; ++j) {
      const double l = std::log1p(c.scores[j]);
      mean[j] += l;
      sq[j] += l * l;
    }
  }
  const double n = static_cast<double>(cfg.candidates);
  for (std::size_t j = 0; j < cfg.tasks; ++j) {
    mean[j] /= n;
    q.state_features.push_back(mean[j]);
  }
  for (std::size_t j = 0; j < cfg.tasks; ++j) q.state_features.push_back(std::sqrt(std::max(0.0, sq[j] / n - mean[j] * mean[j])));
  return q;
}

/// Query pool for one split ("train" or "heldout"); query q of a split is a
/// pure function of (seed, split, q).
inline std::vector<QueryContext> generate_episode_pool(const EnvConfig& cfg, const std::vector<UserProfile>& users,
                                                       const std::string& split, std::size_t count) {
  cfg.validate();
  const SeededRng root(cfg.seed);
  auto pool_rng = root.split("env").split("pool").split(split);
  std::vector<QueryContext> pool;
  pool.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t user = i % users.size();
    pool.push_back(generate_query(cfg, users, user, i, pool_rng.split("query", i)));
  }
  return pool;
}

class SimEnv {
 public:
  SimEnv() = default;

  explicit SimEnv(EnvConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const SeededRng root(cfg_.seed);
    users_ = generate_users(cfg_, root.split("env").split("users"));
    train_ = generate_episode_pool(cfg_, users_, "train", cfg_.users * cfg_.queries_per_user);
    heldout_ = generate_episode_pool(cfg_, users_, "heldout", cfg_.heldout_queries);
  }

  const EnvConfig& config() const { return cfg_; }
  const std::vector<UserProfile>& users() const { return users_; }
  const std::vector<QueryContext>& train_pool() const { return train_; }
  const std::vector<QueryContext>& heldout_pool() const { return heldout_; }
  const std::vector<QueryContext>& pool(const std::string& split) const {
    if (split == "train") return train_;
    if (split == "heldout") return heldout_;
    throw DomainError("unknown pool split '" + split + "'");
  }

  /// Click probability of an examined item.
  double attractiveness(const QueryContext& q, const Candidate& c) const {
    const double x = q.intent * c.quality + (1.0 - q.intent) * c.relevance;
    const double lo = sigmoid(-cfg_.click_steepness * cfg_.click_center);
    const double hi = sigmoid(cfg_.click_steepness * (1.0 - cfg_.click_center));
    const double t = (sigmoid(cfg_.click_steepness * (x - cfg_.click_center)) - lo) / (hi - lo);
    return cfg_.click_floor + (1.0 - cfg_.click_floor) * t;
  }

  double long_play_probability(const Candidate& c) const {
    return sigmoid(cfg_.long_play_steepness * (c.quality - cfg_.long_play_center));
  }

  static double examination(std::size_t position) { return 1.0 / std::log2(static_cast<double>(position) + 1.0); }

  /// Expected click probability of a candidate shown at 1-based `position`.
  double click_probability(const QueryContext& q, const Candidate& c, std::size_t position) const {
    return examination(position) * attractiveness(q, c);
  }

  /// Examination-free expected gains per candidate, for scoring counterfactual rankings.
  std::vector<double> expected_gains(const QueryContext& q, double click_weight, double long_play_weight) const {
    std::vector<double> g(q.candidates.size());
    for (std::size_t n = 0; n < g.size(); ++n) {
      const double a = attractiveness(q, q.candidates[n]);
      g[n] = click_weight * a + long_play_weight * a * long_play_probability(q.candidates[n]);
    }
    return g;
  }

  std::vector<ItemFeedback> realize_feedback(const QueryContext& q, const RankedList& ranking, SeededRng rng) const {
    if (!is_permutation_of(ranking.order, q.candidates.size())) {
      throw DomainError("realize_feedback: ranking is not a permutation of the candidates");
    }
    std::vector<ItemFeedback> fb(q.candidates.size());
    for (std::size_t p = 0; p < ranking.order.size(); ++p) {
      const std::size_t n = ranking.order[p];
      const auto& c = q.candidates[n];
      auto& f = fb[n];
      f.relevance_label = c.relevance;
      f.click = rng.bernoulli(click_probability(q, c, p + 1)) ? 1 : 0;
      if (f.click) {
        f.long_play = rng.bernoulli(long_play_probability(c)) ? 1 : 0;
        f.duration = cfg_.duration_base * (0.2 + c.quality) * (f.long_play ? 2.0 : 1.0) *
                     std::exp(0.3 * rng.normal() - 0.045);
      }
    }
    return fb;
  }

  /// How well one item serves the query: relevance, discounted for low quality.
  double item_value(const Candidate& c) const {
    return c.relevance * ((1.0 - cfg_.utility_quality_weight) + cfg_.utility_quality_weight * c.quality);
  }

  /// Examination-weighted mean item value over the top `utility_top_k` ranked items.
  double utility(const QueryContext& q, const RankedList& ranking) const {
    const std::size_t depth = std::min(cfg_.utility_top_k, ranking.order.size());
    double u = 0.0, norm = 0.0;
    for (std::size_t p = 0; p < depth; ++p) {
      u += examination(p + 1) * item_value(q.candidates[ranking.order[p]]);
      norm += examination(p + 1);
    }
    return u / norm;
  }

  double reformulation_probability(double utility) const {
    return sigmoid(cfg_.reform_steepness * (cfg_.utility_threshold - utility));
  }

  double expected_session_gap(const QueryContext& q, double utility) const {
    return users_[q.user].gap_baseline * std::exp(-cfg_.gap_sensitivity * (utility - cfg_.utility_threshold));
  }

  double retention_probability(const QueryContext& q, double utility) const {
    return sigmoid(users_[q.user].retention_logit + cfg_.retention_sensitivity * utility);
  }

  double retention_probability(const QueryContext& q, const RankedList& ranking) const {
    return retention_probability(q, utility(q, ranking));
  }

  QueryOutcome realize_outcomes(const QueryContext& q, const RankedList& ranking,
                                std::span<const ItemFeedback> feedback, SeededRng rng) const {
    require_dim(feedback.size(), q.candidates.size(), "realize_outcomes feedback");
    QueryOutcome o;
    o.utility = utility(q, ranking);
    o.reformulated = rng.bernoulli(reformulation_probability(o.utility)) ? 1 : 0;
    const double s = cfg_.gap_noise;
    o.session_gap = expected_session_gap(q, o.utility) * std::exp(s * rng.normal() - 0.5 * s * s);
    o.retention_probability = retention_probability(q, o.utility);
    o.retained = rng.bernoulli(o.retention_probability) ? 1 : 0;
    const double activity = users_[q.user].activity;
    const double follow = o.retained ? activity * (0.3 + 0.7 * o.utility) : 0.1 * activity;
    o.future_clicks = static_cast<int>(rng.binomial(cfg_.future_trials, std::clamp(follow, 0.0, 1.0)));
    o.future_long_plays = static_cast<int>(rng.binomial(static_cast<std::size_t>(o.future_clicks),
                                                        std::clamp(0.2 + o.utility, 0.0, 1.0)));
    return o;
  }

  /// Logs one impression: rank with `weights`, realize feedback and outcomes.
  QueryEpisode log_episode(const QueryContext& q, std::span<const double> weights, SeededRng rng) const {
    const auto ranking = rank(q.candidates, weights);
    const auto fb = realize_feedback(q, ranking, rng.split("feedback"));
    const auto o = realize_outcomes(q, ranking, fb, rng.split("outcomes"));
    QueryEpisode e;
    e.user_id = q.user;
    e.query_id = q.query_id;
    e.state_features = q.state_features;
    e.weights.assign(weights.begin(), weights.end());
    for (std::size_t n : ranking.order) {
      e.candidates.push_back(q.candidates[n]);
      e.feedback.push_back(fb[n]);
    }
    e.reformulated = o.reformulated;
    e.session_gap = o.session_gap;
    e.retained = o.retained;
    e.user_gap_baseline = users_[q.user].gap_baseline;
    e.future_clicks = o.future_clicks;
    e.future_long_plays = o.future_long_plays;
    e.retention_probability = o.retention_probability;
    return e;
  }

 private:
  EnvConfig cfg_;
  std::vector<UserProfile> users_;
  std::vector<QueryContext> train_;
  std::vector<QueryContext> heldout_;
};

}  // namespace safro

#endif  // SAFRO_SIMENV_HPP_
