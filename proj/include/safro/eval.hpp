#ifndef SAFRO_EVAL_HPP_
#define SAFRO_EVAL_HPP_

// Offline evaluation on a held-out pool and the alpha-sensitivity analysis.

#include <cmath>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "safro/core.hpp"
#include "safro/io.hpp"
#include "safro/parallel.hpp"
#include "safro/policy.hpp"
#include "safro/reward.hpp"
#include "safro/satisfaction.hpp"
#include "safro/task.hpp"

namespace safro {

struct EvalReport {
  std::size_t episodes = 0;
  double ndcg_click = 0.0;
  double ndcg_long_play = 0.0;
  double ndcg_duration = 0.0;
  double ndcg_relevance = 0.0;
  double ndcg_average = 0.0;
  double satisfaction_score = 0.0;     // mean predicted satisfaction
  double retention_probability = 0.0;  // mean ground-truth next-day retention probability
  double composite_reward = 0.0;
  double engagement_reward = 0.0;
  double format_action = 0.0;
  double format_relevance = 0.0;
  double feasible_fraction = 0.0;

  std::vector<std::pair<std::string, double>> metrics() const {
    return {{"ndcg@10_click", ndcg_click},
            {"ndcg@10_long_play", ndcg_long_play},
            {"ndcg@10_duration", ndcg_duration},
            {"ndcg@10_relevance", ndcg_relevance},
            {"ndcg@10_average", ndcg_average},
            {"satisfaction_score", satisfaction_score},
            {"retention_probability", retention_probability},
            {"composite_reward", composite_reward},
            {"engagement_reward", engagement_reward},
            {"format_action", format_action},
            {"format_relevance", format_relevance},
            {"feasible_fraction", feasible_fraction}};
  }
};

inline OrderedJson report_json(const EvalReport& r) {
  OrderedJson j;
  j["episodes"] = r.episodes;
  for (const auto& [name, value] : r.metrics()) j[name] = value;
  return j;
}

inline EvalReport report_from_json(const Json& j) {
  EvalReport r;
  r.episodes = j.at("episodes").get<std::size_t>();
  r.ndcg_click = j.at("ndcg@10_click").get<double>();
  r.ndcg_long_play = j.at("ndcg@10_long_play").get<double>();
  r.ndcg_duration = j.at("ndcg@10_duration").get<double>();
  r.ndcg_relevance = j.at("ndcg@10_relevance").get<double>();
  r.ndcg_average = j.at("ndcg@10_average").get<double>();
  r.satisfaction_score = j.at("satisfaction_score").get<double>();
  r.retention_probability = j.at("retention_probability").get<double>();
  r.composite_reward = j.at("composite_reward").get<double>();
  r.engagement_reward = j.at("engagement_reward").get<double>();
  r.format_action = j.at("format_action").get<double>();
  r.format_relevance = j.at("format_relevance").get<double>();
  r.feasible_fraction = j.at("feasible_fraction").get<double>();
  return r;
}

/// Two aligned columns: metric name, value.
inline std::string report_table(const EvalReport& r) {
  std::string out;
  char line[96];
  std::snprintf(line, sizeof line, "%-24s %14s\n", "metric", "value");
  out += line;
  std::snprintf(line, sizeof line, "%-24s %14zu\n", "episodes", r.episodes);
  out += line;
  for (const auto& [name, value] : r.metrics()) {
    std::snprintf(line, sizeof line, "%-24s %14.6f\n", name.c_str(), value);
    out += line;
  }
  return out;
}

struct QueryEvaluation {
  double ndcg_click = 0.0;
  double ndcg_long_play = 0.0;
  double ndcg_duration = 0.0;
  double ndcg_relevance = 0.0;
  double satisfaction = 0.0;
  double retention_probability = 0.0;
  RewardBreakdown reward;
};

/// Scores one query under a fixed action. Feedback, outcome and reward draws
/// come from `rng`, so different actions on the same query share randomness.
inline QueryEvaluation evaluate_query(const FusionTask& task, const QueryContext& q, const FusionAction& a,
                                      const SeededRng& rng, std::size_t cutoff) {
  const auto ranking = rank(q.candidates, a.weights);
  const auto fb = task.env().realize_feedback(q, ranking, rng.split("feedback"));
  const std::size_t n = q.candidates.size();
  std::vector<double> click(n), lp(n), dur(n), rel(n);
  for (std::size_t i = 0; i < n; ++i) {
    click[i] = fb[i].click;
    lp[i] = fb[i].long_play;
    dur[i] = fb[i].duration;
    rel[i] = fb[i].relevance_label;
  }
  QueryEvaluation e;
  e.ndcg_click = ndcg_at(ranking, click, cutoff);
  e.ndcg_long_play = ndcg_at(ranking, lp, cutoff);
  e.ndcg_duration = ndcg_at(ranking, dur, cutoff);
  e.ndcg_relevance = ndcg_at(ranking, rel, cutoff);
  e.satisfaction = task.model() ? task.satisfaction(q, ranking) : 0.0;
  e.retention_probability = task.env().retention_probability(q, ranking);
  auto reward_rng = rng.split("reward");
  e.reward = task.score(q, a, ranking, reward_rng);
  return e;
}

/// Evaluates `choose(i) -> FusionAction` over every query of the task's pool.
template <typename Chooser>
EvalReport evaluate_actions(const FusionTask& task, Chooser&& choose, const SeededRng& rng, std::size_t jobs = 1) {
  const std::size_t n = task.size();
  if (n == 0) throw DomainError("evaluate: empty pool");
  std::vector<QueryEvaluation> per(n);
  const std::size_t cutoff = task.options().reward.ndcg_cutoff;
  parallel_for(n, jobs, [&](std::size_t i) {
    per[i] = evaluate_query(task, task.query(i), choose(i), rng.split("query", i), cutoff);
  });
  EvalReport r;
  r.episodes = n;
  for (const auto& e : per) {
    r.ndcg_click += e.ndcg_click;
    r.ndcg_long_play += e.ndcg_long_play;
    r.ndcg_duration += e.ndcg_duration;
    r.ndcg_relevance += e.ndcg_relevance;
    r.satisfaction_score += e.satisfaction;
    r.retention_probability += e.retention_probability;
    r.composite_reward += e.reward.total();
    r.engagement_reward += e.reward.engagement;
    r.format_action += e.reward.format_action;
    r.format_relevance += e.reward.format_relevance;
    r.feasible_fraction += e.reward.format_action == 0.0 ? 1.0 : 0.0;
  }
  const double d = static_cast<double>(n);
  for (double* v : {&r.ndcg_click, &r.ndcg_long_play, &r.ndcg_duration, &r.ndcg_relevance, &r.satisfaction_score,
                    &r.retention_probability, &r.composite_reward, &r.engagement_reward, &r.format_action,
                    &r.format_relevance, &r.feasible_fraction}) {
    *v /= d;
  }
  r.ndcg_average = (r.ndcg_click + r.ndcg_long_play + r.ndcg_duration + r.ndcg_relevance) / 4.0;
  return r;
}

/// Greedy (per-task argmax) policy evaluation.
inline EvalReport evaluate_policy(const Policy& policy, const FusionTask& task, const SeededRng& rng,
                                  std::size_t jobs = 1) {
  return evaluate_actions(task, [&](std::size_t i) { return policy.greedy(policy.forward(task.state(i))); }, rng,
                          jobs);
}

/// Equal weights 1/k for every task.
inline EvalReport evaluate_uniform(const FusionTask& task, const SeededRng& rng, std::size_t jobs = 1) {
  const std::size_t k = task.env().config().tasks;
  FusionAction a;
  a.weights.assign(k, 1.0 / static_cast<double>(k));
  return evaluate_actions(task, [&](std::size_t) { return a; }, rng, jobs);
}

/*
 * Alpha sensitivity
 */

/// Pearson correlation; nullopt when either series has zero variance.
inline std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  require_dim(y.size(), x.size(), "pearson series");
  if (x.size() < 2) return std::nullopt;
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

struct AlphaPoint {
  double alpha = 0.0;
  std::optional<double> rho_gap;        // rho(r_sat, gap score)
  std::optional<double> rho_retention;  // rho(r_sat, I_ret)
  std::optional<double> composite;      // sum, when both are defined
};

struct AlphaSensitivity {
  std::vector<AlphaPoint> points;
  std::optional<std::size_t> best;  // argmax of the composite over defined points

  std::optional<double> best_alpha() const {
    if (!best) return std::nullopt;
    return points[*best].alpha;
  }
};

inline AlphaSensitivity alpha_sensitivity(const std::vector<QueryEpisode>& episodes, const SatConfig& base,
                                          std::span<const double> alphas) {
  base.validate();
  const std::size_t n = episodes.size();
  std::vector<double> gap(n), ret(n), sat(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = episodes[i];
    gap[i] = gap_score(e.session_gap, e.user_gap_baseline, base.stability, base.temperature);
    ret[i] = e.retained;
  }
  AlphaSensitivity out;
  for (double a : alphas) {
    SatConfig cfg = base;
    if (!(a >= 0.0 && a <= 1.0)) throw DomainError("alpha_sensitivity: alpha outside [0, 1]");
    cfg.alpha = a;  // endpoints allowed here, unlike in training configs
    for (std::size_t i = 0; i < n; ++i) sat[i] = r_sat(episodes[i], cfg);
    AlphaPoint p;
    p.alpha = a;
    p.rho_gap = pearson(sat, gap);
    p.rho_retention = pearson(sat, ret);
    if (p.rho_gap && p.rho_retention) p.composite = *p.rho_gap + *p.rho_retention;
    out.points.push_back(p);
  }
  for (std::size_t i = 0; i < out.points.size(); ++i) {
    const auto& c = out.points[i].composite;
    if (c && (!out.best || *c > *out.points[*out.best].composite)) out.best = i;
  }
  return out;
}

inline OrderedJson alpha_sensitivity_json(const AlphaSensitivity& s) {
  auto opt = [](const std::optional<double>& v) { return v ? OrderedJson(*v) : OrderedJson(nullptr); };
  OrderedJson j;
  j["points"] = OrderedJson::array();
  for (const auto& p : s.points) {
    OrderedJson row;
    row["alpha"] = p.alpha;
    row["rho_gap"] = opt(p.rho_gap);
    row["rho_retention"] = opt(p.rho_retention);
    row["composite"] = opt(p.composite);
    row["undefined"] = !p.composite.has_value();
    j["points"].push_back(row);
  }
  j["best_alpha"] = opt(s.best_alpha());
  return j;
}

}  // namespace safro

#endif  // SAFRO_EVAL_HPP_
