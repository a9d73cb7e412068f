#ifndef SAFRO_DRPO_HPP_
#define SAFRO_DRPO_HPP_

// Dual-relative policy optimization: group-relative advantages, the
// batch-relative shift C^i, the clipped surrogate with entropy bonus, and the
// on-policy training loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <concepts>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "safro/core.hpp"
#include "safro/parallel.hpp"
#include "safro/policy.hpp"
#include "safro/reward.hpp"

namespace safro {

enum class AdvantageMode { group_only, dual };
enum class Optimizer { sgd, adam };

struct DrpoConfig {
  std::size_t group_size = 32;   // G
  std::size_t batch_size = 16;   // B_q, query groups per iteration
  double clip = 0.2;             // epsilon
  double entropy_coef = 0.05;    // beta_H
  std::size_t epochs = 4;        // E
  double learning_rate = 0.05;
  double momentum = 0.0;         // sgd only
  Optimizer optimizer = Optimizer::sgd;
  double std_floor = 1e-8;
  double max_grad_norm = 0.0;    // 0 disables norm clipping
  AdvantageMode mode = AdvantageMode::dual;
  std::size_t iterations = 200;
  std::size_t jobs = 1;

  void validate() const {
    if (group_size < 2) throw ConfigError("drpo.group_size: expected value >= 2");
    if (batch_size < 2) throw ConfigError("drpo.batch_size: expected value >= 2");
    if (!(clip > 0.0 && clip < 1.0)) throw ConfigError("drpo.clip: expected value in (0, 1)");
    if (!(entropy_coef >= 0.0)) throw ConfigError("drpo.entropy_coef: expected value >= 0");
    if (epochs < 1) throw ConfigError("drpo.epochs: expected value >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("drpo.learning_rate: expected value > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("drpo.momentum: expected value in [0, 1)");
    if (!(std_floor > 0.0)) throw ConfigError("drpo.std_floor: expected value > 0");
    if (!(max_grad_norm >= 0.0)) throw ConfigError("drpo.max_grad_norm: expected value >= 0");
    if (iterations < 1) throw ConfigError("drpo.iterations: expected value >= 1");
  }
};

/*
 * Advantages
 */

struct NormalizedValues {
  std::vector<double> values;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

namespace detail {

inline NormalizedValues standardize(std::span<const double> x, double floor) {
  NormalizedValues out;
  const double n = static_cast<double>(x.size());
  for (double v : x) out.mean += v;
  out.mean /= n;
  double ss = 0.0;
  for (double v : x) ss += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(ss / n);
  out.values.assign(x.size(), 0.0);
  if (out.std < floor) return out;
  for (std::size_t i = 0; i < x.size(); ++i) out.values[i] = (x[i] - out.mean) / out.std;
  return out;
}

}  // namespace detail

/// (r_g - mu) / sigma within one group; all zeros when sigma < floor.
inline NormalizedValues group_advantage(std::span<const double> rewards, double std_floor) {
  if (rewards.size() < 2) throw DomainError("group_advantage: group size must be >= 2");
  return detail::standardize(rewards, std_floor);
}

/// C^i = (mu^i - mu_batch) / sigma_batch over group means; all zeros when sigma_batch < floor.
inline NormalizedValues batch_shift(std::span<const double> group_means, double std_floor) {
  if (group_means.size() < 2) throw DomainError("batch_shift: batch size must be >= 2");
  return detail::standardize(group_means, std_floor);
}

/// Rewards and advantages of B_q groups of G sampled actions, row-major (i, g).
struct AdvantageBatch {
  std::size_t groups = 0;
  std::size_t group_size = 0;
  std::vector<double> rewards;
  std::vector<double> group_means;
  std::vector<double> group_stds;
  double batch_mean = 0.0;
  double batch_std = 0.0;
  std::vector<double> group_advantages;
  std::vector<double> shifts;  // C^i
  std::vector<double> dual_advantages;

  double reward(std::size_t i, std::size_t g) const { return rewards[i * group_size + g]; }
  double group_adv(std::size_t i, std::size_t g) const { return group_advantages[i * group_size + g]; }
  double dual(std::size_t i, std::size_t g) const { return dual_advantages[i * group_size + g]; }
};

inline AdvantageBatch dual_advantage(std::span<const double> rewards, std::size_t groups,
                                     std::size_t group_size, double std_floor,
                                     AdvantageMode mode = AdvantageMode::dual) {
  if (rewards.size() != groups * group_size) throw DimensionError("dual_advantage: reward matrix shape mismatch");
  if (groups < 2) throw DomainError("dual_advantage: batch size must be >= 2");
  if (group_size < 2) throw DomainError("dual_advantage: group size must be >= 2");
  AdvantageBatch b;
  b.groups = groups;
  b.group_size = group_size;
  b.rewards.assign(rewards.begin(), rewards.end());
  b.group_advantages.resize(rewards.size());
  for (std::size_t i = 0; i < groups; ++i) {
    const auto g = group_advantage(rewards.subspan(i * group_size, group_size), std_floor);
    std::copy(g.values.begin(), g.values.end(), b.group_advantages.begin() + static_cast<std::ptrdiff_t>(i * group_size));
    b.group_means.push_back(g.mean);
    b.group_stds.push_back(g.std);
  }
  const auto c = batch_shift(b.group_means, std_floor);
  b.batch_mean = c.mean;
  b.batch_std = c.std;
  b.shifts = mode == AdvantageMode::dual ? c.values : std::vector<double>(groups, 0.0);
  b.dual_advantages.resize(rewards.size());
  for (std::size_t i = 0; i < groups; ++i) {
    for (std::size_t g = 0; g < group_size; ++g) {
      b.dual_advantages[i * group_size + g] = b.group_advantages[i * group_size + g] + b.shifts[i];
    }
  }
  return b;
}

inline AdvantageBatch dual_advantage(const std::vector<std::vector<double>>& rewards, double std_floor,
                                     AdvantageMode mode = AdvantageMode::dual) {
  if (rewards.empty()) throw DomainError("dual_advantage: empty batch");
  const std::size_t g = rewards.front().size();
  std::vector<double> flat;
  for (const auto& row : rewards) {
    if (row.size() != g) throw DimensionError("dual_advantage: ragged reward matrix");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return dual_advantage(flat, rewards.size(), g, std_floor, mode);
}

/*
 * Clipped surrogate
 */

struct SurrogateResult {
  double objective = 0.0;
  std::vector<double> log_prob_coefficients;  // d objective / d new_log_prob, per sample
  double entropy_coefficient = 0.0;           // d objective / d entropy, per group
  double clip_fraction = 0.0;                 // share of samples on the constant clipped branch
};

/// J = mean_i [ (1/G) sum_g min(rho A, clip(rho, 1-eps, 1+eps) A) ] + beta_H * mean_i H_i.
inline SurrogateResult surrogate_objective(std::span<const double> new_log_probs,
                                           std::span<const double> old_log_probs,
                                           std::span<const double> advantages,
                                           std::span<const double> entropies, std::size_t groups,
                                           std::size_t group_size, double clip, double entropy_coef) {
  const std::size_t n = groups * group_size;
  if (new_log_probs.size() != n || old_log_probs.size() != n || advantages.size() != n) {
    throw DimensionError("surrogate_objective: sample arrays must have B_q * G entries");
  }
  require_dim(entropies.size(), groups, "surrogate_objective entropies");
  if (!all_finite(new_log_probs) || !all_finite(old_log_probs) || !all_finite(advantages) ||
      !all_finite(entropies)) {
    throw NumericalError("surrogate_objective: non-finite input");
  }
  SurrogateResult r;
  r.log_prob_coefficients.assign(n, 0.0);
  const double scale = 1.0 / static_cast<double>(n);
  std::size_t clipped = 0;
  double sum = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const double rho = std::exp(new_log_probs[s] - old_log_probs[s]);
    const double a = advantages[s];
    const double unclipped = rho * a;
    const double clipped_term = std::clamp(rho, 1.0 - clip, 1.0 + clip) * a;
    if (clipped_term < unclipped) {
      sum += clipped_term;
      ++clipped;
    } else {
      sum += unclipped;
      r.log_prob_coefficients[s] = unclipped * scale;  // d(rho A)/d log pi = rho A
    }
  }
  double ent = 0.0;
  for (double h : entropies) ent += h;
  ent /= static_cast<double>(groups);
  r.objective = sum * scale + entropy_coef * ent;
  r.entropy_coefficient = entropy_coef / static_cast<double>(groups);
  r.clip_fraction = static_cast<double>(clipped) / static_cast<double>(n);
  return r;
}

/*
 * Gradient assembly
 */

/// sum_i [ sum_g coef[i,g] * grad log pi(a[i,g] | x_i) + ent_coef * grad H_i ],
/// one backward pass per state. Per-state partials are summed in index order
/// so the result does not depend on `jobs`.
inline std::vector<double> surrogate_gradient(const Policy& policy,
                                              std::span<const Policy::Cache> caches,
                                              std::span<const FusionAction> actions,
                                              std::span<const double> coefficients,
                                              double entropy_coefficient, std::size_t jobs = 1) {
  const std::size_t groups = caches.size();
  if (groups == 0) throw DimensionError("surrogate_gradient: no states");
  const std::size_t g = actions.size() / groups;
  require_dim(actions.size(), groups * g, "surrogate_gradient actions");
  require_dim(coefficients.size(), actions.size(), "surrogate_gradient coefficients");
  const std::size_t kb = policy.tasks() * policy.bins();
  std::vector<std::vector<double>> partial(groups);
  parallel_for(groups, jobs, [&](std::size_t i) {
    std::vector<double> d_refined(kb, 0.0);
    bool any = false;
    for (std::size_t s = 0; s < g; ++s) {
      const double c = coefficients[i * g + s];
      if (c == 0.0) continue;
      const auto d = policy.refined_logit_gradient(caches[i].out, actions[i * g + s], c, 0.0);
      for (std::size_t t = 0; t < kb; ++t) d_refined[t] += d[t];
      any = true;
    }
    if (entropy_coefficient != 0.0) {
      const auto d = policy.refined_logit_gradient(caches[i].out, actions[i * g], 0.0, entropy_coefficient);
      for (std::size_t t = 0; t < kb; ++t) d_refined[t] += d[t];
      any = true;
    }
    partial[i] = policy.zero_grads();
    if (any) policy.backward_from_refined(caches[i], d_refined, partial[i]);
  });
  auto total = policy.zero_grads();
  for (const auto& p : partial) {
    for (std::size_t t = 0; t < total.size(); ++t) total[t] += p[t];
  }
  return total;
}

/*
 * Training
 */

/// A source of query states and rewards for sampled fusion actions.
template <typename E>
concept PolicyEnvironment = requires(const E& env, std::size_t i, const FusionAction& a, SeededRng& rng) {
  { env.size() } -> std::convertible_to<std::size_t>;
  { env.state(i) } -> std::convertible_to<std::span<const double>>;
  { env.reward(i, a, rng) } -> std::convertible_to<RewardBreakdown>;
};

struct IterationMetrics {
  std::size_t iteration = 0;
  double mean_reward = 0.0;
  double mean_entropy = 0.0;
  double clip_fraction = 0.0;
  double mean_abs_shift = 0.0;
  double objective = 0.0;
  double mean_engagement = 0.0;
  double mean_satisfaction = 0.0;
  double feasible_fraction = 0.0;
};

inline OrderedJson metrics_json(const IterationMetrics& m) {
  OrderedJson j;
  j["iteration"] = m.iteration;
  j["mean_reward"] = m.mean_reward;
  j["mean_entropy"] = m.mean_entropy;
  j["clip_fraction"] = m.clip_fraction;
  j["mean_abs_C"] = m.mean_abs_shift;
  j["objective"] = m.objective;
  j["mean_engagement"] = m.mean_engagement;
  j["mean_satisfaction"] = m.mean_satisfaction;
  j["feasible_fraction"] = m.feasible_fraction;
  return j;
}

struct TrainResult {
  Policy policy;
  std::vector<IterationMetrics> trace;
};

/// Gradient ascent on the surrogate: B_q states per iteration, G actions per
/// state from the snapshot policy, E surrogate epochs on that batch.
template <PolicyEnvironment Env>
TrainResult train(const Env& env, Policy policy, const DrpoConfig& cfg, SeededRng rng,
                  const std::function<void(const IterationMetrics&, const Policy&)>& on_iteration = {}) {
  cfg.validate();
  const std::size_t bq = cfg.batch_size;
  const std::size_t gs = cfg.group_size;
  const std::size_t pool = env.size();
  if (pool == 0) throw DomainError("train: empty environment");
  std::vector<double> velocity(policy.params().size(), 0.0);  // first moment under adam
  std::vector<double> second(cfg.optimizer == Optimizer::adam ? policy.params().size() : 0, 0.0);
  std::uint64_t adam_step = 0;
  TrainResult result;

  std::vector<std::size_t> picks(bq);
  std::vector<Policy::Cache> caches(bq);
  std::vector<FusionAction> actions(bq * gs);
  std::vector<double> old_lp(bq * gs), new_lp(bq * gs), rewards(bq * gs);
  std::vector<RewardBreakdown> parts(bq * gs);
  std::vector<double> entropies(bq);

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    auto it_rng = rng.split("iteration", it);
    auto pick_rng = it_rng.split("states");
    for (auto& p : picks) p = pick_rng.below(pool);

    // Rollout from the snapshot policy.
    parallel_for(bq, cfg.jobs, [&](std::size_t i) {
      auto q_rng = it_rng.split("query", i);
      auto act_rng = q_rng.split("actions");
      auto env_rng = q_rng.split("env");
      caches[i] = policy.forward_cached(env.state(picks[i]));
      entropies[i] = policy.entropy(caches[i].out);
      for (std::size_t g = 0; g < gs; ++g) {
        auto s = policy.sample(caches[i].out, act_rng);
        actions[i * gs + g] = s.action;
        old_lp[i * gs + g] = s.log_prob;
        auto sample_rng = env_rng.split("sample", g);
        parts[i * gs + g] = env.reward(picks[i], s.action, sample_rng);
        rewards[i * gs + g] = parts[i * gs + g].total();
      }
    });

    const auto adv = dual_advantage(rewards, bq, gs, cfg.std_floor, cfg.mode);

    IterationMetrics m;
    m.iteration = it;
    for (std::size_t s = 0; s < bq * gs; ++s) {
      m.mean_reward += rewards[s];
      m.mean_engagement += parts[s].engagement;
      m.mean_satisfaction += parts[s].satisfaction;
      m.feasible_fraction += parts[s].format_action == 0.0 ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(bq * gs);
    m.mean_reward /= n;
    m.mean_engagement /= n;
    m.mean_satisfaction /= n;
    m.feasible_fraction /= n;
    for (double h : entropies) m.mean_entropy += h;
    m.mean_entropy /= static_cast<double>(bq);
    for (double c : adv.shifts) m.mean_abs_shift += std::abs(c);
    m.mean_abs_shift /= static_cast<double>(bq);

    double clip_sum = 0.0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      std::vector<double> ent(bq);
      if (epoch > 0) {
        parallel_for(bq, cfg.jobs, [&](std::size_t i) { caches[i] = policy.forward_cached(env.state(picks[i])); });
      }
      for (std::size_t i = 0; i < bq; ++i) {
        ent[i] = policy.entropy(caches[i].out);
        for (std::size_t g = 0; g < gs; ++g) new_lp[i * gs + g] = policy.log_prob(caches[i].out, actions[i * gs + g]);
      }
      const auto sur = surrogate_objective(new_lp, old_lp, adv.dual_advantages, ent, bq, gs, cfg.clip,
                                           cfg.entropy_coef);
      clip_sum += sur.clip_fraction;
      m.objective = sur.objective;
      auto grad = surrogate_gradient(policy, caches, actions, sur.log_prob_coefficients, sur.entropy_coefficient,
                                     cfg.jobs);
      if (cfg.max_grad_norm > 0.0) {
        double norm = 0.0;
        for (double v : grad) norm += v * v;
        norm = std::sqrt(norm);
        if (norm > cfg.max_grad_norm) {
          for (double& v : grad) v *= cfg.max_grad_norm / norm;
        }
      }
      auto& p = policy.params();
      if (cfg.optimizer == Optimizer::adam) {
        ++adam_step;
        const double c1 = 1.0 - std::pow(0.9, static_cast<double>(adam_step));
        const double c2 = 1.0 - std::pow(0.999, static_cast<double>(adam_step));
        for (std::size_t t = 0; t < p.size(); ++t) {
          velocity[t] = 0.9 * velocity[t] + 0.1 * grad[t];
          second[t] = 0.999 * second[t] + 0.001 * grad[t] * grad[t];
          p[t] += cfg.learning_rate * (velocity[t] / c1) / (std::sqrt(second[t] / c2) + 1e-8);
        }
      } else {
        for (std::size_t t = 0; t < p.size(); ++t) {
          velocity[t] = cfg.momentum * velocity[t] + cfg.learning_rate * grad[t];
          p[t] += velocity[t];
        }
      }
      if (!all_finite(p)) {
        for (const auto& e : policy.layout().entries()) {
          if (!all_finite(policy.layout().view(p, &e - policy.layout().entries().data()))) {
            throw NumericalError("train: non-finite parameters in '" + e.name + "' at iteration " +
                                 std::to_string(it) + ", epoch " + std::to_string(epoch) +
                                 " (mean reward " + std::to_string(m.mean_reward) + ")");
          }
        }
      }
    }
    m.clip_fraction = clip_sum / static_cast<double>(cfg.epochs);
    result.trace.push_back(m);
    if (on_iteration) on_iteration(m, policy);
  }
  result.policy = std::move(policy);
  return result;
}

}  // namespace safro

#endif  // SAFRO_DRPO_HPP_
