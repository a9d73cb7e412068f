#include <gtest/gtest.h>

#include <cmath>

#include "safro/drpo.hpp"
#include "support.hpp"

using namespace safro;

namespace {

/// One state, one task, bins {0, 1}; the second bin always pays 1.
struct TwoArmBandit {
  std::vector<double> x{1.0};
  std::size_t size() const { return 1; }
  std::span<const double> state(std::size_t) const { return x; }
  RewardBreakdown reward(std::size_t, const FusionAction& a, SeededRng&) const {
    RewardBreakdown r;
    r.engagement = a.bin_indices[0] == 1 ? 1.0 : 0.0;
    return r;
  }
};

/// A few random states and a fixed random reward table over joint actions.
struct TableEnv {
  std::vector<std::vector<double>> states;
  std::vector<double> table;
  std::size_t bins = 0;
  std::size_t size() const { return states.size(); }
  std::span<const double> state(std::size_t i) const { return states[i]; }
  RewardBreakdown reward(std::size_t i, const FusionAction& a, SeededRng& rng) const {
    std::size_t code = i;
    for (auto b : a.bin_indices) code = code * bins + b;
    RewardBreakdown r;
    r.engagement = table[code % table.size()] + 0.1 * rng.normal();
    return r;
  }
};

static_assert(PolicyEnvironment<TwoArmBandit>);
static_assert(PolicyEnvironment<TableEnv>);

std::vector<double> random_rewards(SeededRng& rng, std::size_t n) {
  std::vector<double> r(n);
  for (double& v : r) v = rng.uniform(-3.0, 2.0);
  return r;
}

}  // namespace

TEST(GroupAdvantage, SymmetricTriple) {
  const std::vector<double> r{1.0, 2.0, 3.0};
  const auto a = group_advantage(r, 1e-8);
  // Population std of (1, 2, 3) is sqrt(2/3).
  const double s = std::sqrt(2.0 / 3.0);
  EXPECT_EQ(a.values[1], 0.0);
  EXPECT_NEAR(a.values[0], -1.0 / s, 1e-15);
  EXPECT_NEAR(a.values[2], 1.0 / s, 1e-15);
}

TEST(GroupAdvantage, EqualRewardsGiveZero) {
  const std::vector<double> r{0.7, 0.7, 0.7, 0.7};
  for (double v : group_advantage(r, 1e-8).values) EXPECT_EQ(v, 0.0);
}

TEST(GroupAdvantage, RejectsSingleton) {
  const std::vector<double> r{1.0};
  EXPECT_THROW(group_advantage(r, 1e-8), DomainError);
}

TEST(BatchShift, TwoGroups) {
  const std::vector<double> means{1.0, 3.0};
  const auto c = batch_shift(means, 1e-8);
  EXPECT_NEAR(c.values[0], -1.0, 1e-15);
  EXPECT_NEAR(c.values[1], 1.0, 1e-15);
}

TEST(BatchShift, EqualMeansGiveZero) {
  const std::vector<double> means{2.0, 2.0, 2.0};
  for (double v : batch_shift(means, 1e-8).values) EXPECT_EQ(v, 0.0);
}

TEST(BatchShift, SumsToZero) {
  SeededRng rng(1);
  for (int t = 0; t < 1000; ++t) {
    const auto means = random_rewards(rng, 2 + rng.below(20));
    double sum = 0.0;
    for (double v : batch_shift(means, 1e-8).values) sum += v;
    EXPECT_NEAR(sum, 0.0, 1e-12);
  }
}

TEST(DualAdvantage, PreservesWithinGroupDifferences) {
  SeededRng rng(2);
  for (int t = 0; t < 200; ++t) {
    const std::size_t bq = 2 + rng.below(10), g = 2 + rng.below(10);
    const auto adv = dual_advantage(random_rewards(rng, bq * g), bq, g, 1e-8);
    for (std::size_t i = 0; i < bq; ++i) {
      for (std::size_t a = 0; a < g; ++a) {
        for (std::size_t b = 0; b < g; ++b) {
          EXPECT_LE(std::abs((adv.dual(i, a) - adv.dual(i, b)) - (adv.group_adv(i, a) - adv.group_adv(i, b))),
                    1e-12);
        }
      }
    }
  }
}

TEST(DualAdvantage, GlobalSumIsZero) {
  SeededRng rng(3);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t bq = 2 + rng.below(16), g = 2 + rng.below(16);
    const auto adv = dual_advantage(random_rewards(rng, bq * g), bq, g, 1e-8);
    double sum = 0.0;
    for (double v : adv.dual_advantages) sum += v;
    EXPECT_LE(std::abs(sum), 1e-9 * static_cast<double>(bq * g));
  }
}

TEST(DualAdvantage, GroupOnlyModeIsPlainGroupNormalization) {
  SeededRng rng(4);
  const auto r = random_rewards(rng, 5 * 4);
  const auto adv = dual_advantage(r, 5, 4, 1e-8, AdvantageMode::group_only);
  for (double c : adv.shifts) EXPECT_EQ(c, 0.0);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto g = group_advantage(std::span<const double>(r).subspan(i * 4, 4), 1e-8);
    for (std::size_t s = 0; s < 4; ++s) EXPECT_EQ(adv.dual(i, s), g.values[s]);
  }
}

TEST(DualAdvantage, GroupTotalsIncreaseWithGroupQuality) {
  SeededRng rng(5);
  for (int t = 0; t < 100; ++t) {
    const std::size_t bq = 3 + rng.below(6), g = 2 + rng.below(8);
    std::vector<double> r;
    for (std::size_t i = 0; i < bq; ++i) {
      for (std::size_t s = 0; s < g; ++s) r.push_back(static_cast<double>(i) * 2.0 + rng.uniform());
    }
    const auto adv = dual_advantage(r, bq, g, 1e-8);
    double prev = -INFINITY;
    for (std::size_t i = 0; i < bq; ++i) {
      double total = 0.0;
      for (std::size_t s = 0; s < g; ++s) total += adv.dual(i, s);
      EXPECT_NEAR(total, static_cast<double>(g) * adv.shifts[i], 1e-10);
      EXPECT_GT(total, prev);
      prev = total;
    }
  }
}

TEST(Surrogate, RatioOneGivesEntropyTermOnly) {
  SeededRng rng(6);
  const std::size_t bq = 4, g = 5;
  const auto adv = dual_advantage(random_rewards(rng, bq * g), bq, g, 1e-8);
  const auto lp = support::random_vector(rng, bq * g, -5.0, -0.1);
  const auto ent = support::random_vector(rng, bq, 0.1, 3.0);
  const auto s = surrogate_objective(lp, lp, adv.dual_advantages, ent, bq, g, 0.2, 0.05);
  double mean_ent = 0.0;
  for (double h : ent) mean_ent += h;
  mean_ent /= bq;
  EXPECT_NEAR(s.objective, 0.05 * mean_ent, 1e-12);
  EXPECT_EQ(s.clip_fraction, 0.0);
}

TEST(Surrogate, ClippedUpperBranch) {
  const std::vector<double> old_lp{0.0, 0.0};
  const std::vector<double> new_lp{std::log(2.0), 0.0};
  const std::vector<double> a{1.5, 0.0};
  const std::vector<double> ent{0.0};
  const auto s = surrogate_objective(new_lp, old_lp, a, ent, 1, 2, 0.2, 0.0);
  EXPECT_NEAR(s.objective, (1.2 * 1.5 + 0.0) / 2.0, 1e-15);
  EXPECT_EQ(s.log_prob_coefficients[0], 0.0);
  EXPECT_EQ(s.clip_fraction, 0.5);
}

TEST(Surrogate, ClippedLowerBranchForNegativeAdvantage) {
  const std::vector<double> old_lp{0.0, 0.0};
  const std::vector<double> new_lp{std::log(0.5), 0.0};
  const std::vector<double> a{-2.0, 0.0};
  const std::vector<double> ent{0.0};
  const auto s = surrogate_objective(new_lp, old_lp, a, ent, 1, 2, 0.2, 0.0);
  EXPECT_NEAR(s.objective, 0.8 * -2.0 / 2.0, 1e-15);
}

TEST(Surrogate, GradientDecomposesIntoGroupAndBatchTerms) {
  SeededRng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = support::random_policy(rng, 4, 3, 4, 8, 4);
    const std::size_t bq = 5, g = 6;
    std::vector<std::vector<double>> states;
    std::vector<Policy::Cache> caches;
    std::vector<FusionAction> actions;
    std::vector<double> lp;
    for (std::size_t i = 0; i < bq; ++i) {
      states.push_back(support::random_vector(rng, 4, -1.0, 1.0));
      caches.push_back(p.forward_cached(states.back()));
      for (std::size_t s = 0; s < g; ++s) {
        const auto smp = p.sample(caches.back().out, rng);
        actions.push_back(smp.action);
        lp.push_back(smp.log_prob);
      }
    }
    const auto adv = dual_advantage(random_rewards(rng, bq * g), bq, g, 1e-8);
    const std::vector<double> ent(bq, 0.0);
    const auto sur = surrogate_objective(lp, lp, adv.dual_advantages, ent, bq, g, 0.2, 0.0);
    const auto full = surrogate_gradient(p, caches, actions, sur.log_prob_coefficients, 0.0);
    const auto terms = support::dual_gradient_terms(p, states, actions, adv);
    double diff = 0.0, norm = 0.0;
    for (std::size_t t = 0; t < full.size(); ++t) {
      const double rhs = terms.term1[t] + terms.term2[t];
      diff += (full[t] - rhs) * (full[t] - rhs);
      norm += full[t] * full[t];
    }
    EXPECT_LE(std::sqrt(diff) / std::sqrt(norm), 1e-10);
  }
}

TEST(Train, TwoArmBanditConvergesToGoodArm) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ActionSpace space({{0.0, 1.0}}, {{0.0, 1.0}}, 0.01);
    const auto p = Policy::initialized(PolicyShape{1, 8, 1, 2, false}, space, FeasibilityMode::soft,
                                       SeededRng(seed).split("init"));
    DrpoConfig cfg;
    cfg.group_size = 16;
    cfg.batch_size = 4;
    cfg.iterations = 200;
    cfg.epochs = 4;
    const auto result = train(TwoArmBandit{}, p, cfg, SeededRng(seed).split("train"));
    const auto out = result.policy.forward(std::vector<double>{1.0});
    EXPECT_GT(out.probs[1], 0.99) << "seed " << seed;
  }
}

TEST(Train, LargeEntropyBonusKeepsPolicyNearUniform) {
  SeededRng rng(8);
  TableEnv env;
  env.bins = 4;
  for (int i = 0; i < 6; ++i) env.states.push_back(support::random_vector(rng, 4, -1.0, 1.0));
  env.table = support::random_vector(rng, 6 * 64, 0.0, 1.0);
  const auto space = ActionSpace::uniform_grid(3, 4, 0.1, 0.55, 0.01);
  const auto p = Policy::initialized(PolicyShape{4, 8, 2, 4, true}, space, FeasibilityMode::soft, rng.split("init"));
  DrpoConfig cfg;
  cfg.entropy_coef = 10.0;
  cfg.group_size = 8;
  cfg.batch_size = 4;
  cfg.iterations = 100;
  cfg.learning_rate = 0.01;
  const auto result = train(env, p, cfg, rng.split("train"));
  const double max_h = 3.0 * std::log(4.0);
  for (const auto& x : env.states) {
    EXPECT_GE(result.policy.entropy(result.policy.forward(x)), 0.99 * max_h);
  }
}

TEST(Train, ResultDoesNotDependOnJobs) {
  SeededRng rng(9);
  TableEnv env;
  env.bins = 3;
  for (int i = 0; i < 5; ++i) env.states.push_back(support::random_vector(rng, 3, -1.0, 1.0));
  env.table = support::random_vector(rng, 5 * 27, 0.0, 1.0);
  const auto space = ActionSpace::uniform_grid(3, 3, 0.2, 0.5, 0.01);
  const auto p = Policy::initialized(PolicyShape{3, 8, 2, 4, true}, space, FeasibilityMode::soft, rng.split("init"));
  DrpoConfig cfg;
  cfg.group_size = 6;
  cfg.batch_size = 4;
  cfg.iterations = 15;
  cfg.jobs = 1;
  const auto a = train(env, p, cfg, rng.split("train"));
  cfg.jobs = 4;
  const auto b = train(env, p, cfg, rng.split("train"));
  EXPECT_EQ(a.policy.params(), b.policy.params());
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t t = 0; t < a.trace.size(); ++t) EXPECT_EQ(a.trace[t].mean_reward, b.trace[t].mean_reward);
}

TEST(DrpoConfig, ValidationRejectsSmallGroups) {
  DrpoConfig c;
  c.group_size = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c.group_size = 2;
  EXPECT_NO_THROW(c.validate());
}
