#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "safro/fusion.hpp"
#include "support.hpp"

using namespace safro;

TEST(FuseScore, ZeroScoresGiveZero) {
  const std::vector<double> s{0.0, 0.0, 0.0};
  EXPECT_EQ(fuse_score(s, std::vector<double>{0.3, 0.5, 0.2}), 0.0);
}

TEST(FuseScore, MatchesExtendedPrecisionEvaluation) {
  const std::vector<double> s{1.0, 3.0};
  const std::vector<double> w{0.5, 0.5};
  const long double oracle = 0.5L * std::log(2.0L) + 0.5L * std::log(4.0L);
  EXPECT_NEAR(fuse_score(s, w), static_cast<double>(oracle), 1e-15);
}

TEST(FuseScore, RejectsBadInput) {
  EXPECT_THROW(fuse_score(std::vector<double>{1.0, 2.0}, std::vector<double>{1.0}), DimensionError);
  EXPECT_THROW(fuse_score(std::vector<double>{-1.0}, std::vector<double>{1.0}), DomainError);
}

TEST(FuseScore, ScalingOneComponentUpNeverLowersScore) {
  SeededRng rng(1);
  for (int t = 0; t < 1000; ++t) {
    auto s = support::random_vector(rng, 4, 0.0, 10.0);
    const auto w = support::random_vector(rng, 4, 0.01, 1.0);
    const double before = fuse_score(s, w);
    s[rng.below(4)] *= rng.uniform(1.0, 5.0);
    EXPECT_GE(fuse_score(s, w), before);
  }
}

TEST(Rank, SingleCandidate) {
  const std::vector<ScoreVector> c{ScoreVector({1.0, 2.0})};
  EXPECT_EQ(rank(c, std::vector<double>{0.5, 0.5}).order, (std::vector<std::size_t>{0}));
}

TEST(Rank, TiesBrokenByIndex) {
  const std::vector<ScoreVector> c{ScoreVector({1.0, 2.0}), ScoreVector({1.0, 2.0})};
  EXPECT_EQ(rank(c, std::vector<double>{0.5, 0.5}).order, (std::vector<std::size_t>{0, 1}));
}

TEST(Rank, EmptyListThrows) {
  const std::vector<ScoreVector> c;
  EXPECT_THROW(rank(c, std::vector<double>{1.0}), DomainError);
}

TEST(Rank, OneHotWeightsRankBySingleTask) {
  SeededRng rng(2);
  for (int t = 0; t < 200; ++t) {
    std::vector<ScoreVector> c;
    for (int n = 0; n < 8; ++n) c.emplace_back(support::random_vector(rng, 3, 0.0, 20.0));
    const std::size_t j = rng.below(3);
    std::vector<double> w(3, 0.0);
    w[j] = 1.0;
    const auto list = rank(c, w);
    for (std::size_t p = 1; p < list.order.size(); ++p) {
      EXPECT_GE(c[list.order[p - 1]][j], c[list.order[p]][j]);
    }
  }
}

TEST(Rank, MatchesBruteForceSortOfIndependentScores) {
  SeededRng rng(3);
  for (int t = 0; t < 500; ++t) {
    std::vector<ScoreVector> c;
    for (int n = 0; n < 5; ++n) {
      auto v = support::random_vector(rng, 3, 0.0, 5.0);
      if (rng.bernoulli(0.2) && n > 0) v = std::vector<double>(c.back().values().begin(), c.back().values().end());
      c.emplace_back(v);
    }
    const auto w = support::random_vector(rng, 3, 0.0, 1.0);
    std::vector<double> f(c.size());
    for (std::size_t n = 0; n < c.size(); ++n) {
      f[n] = 0.0;
      for (std::size_t j = 0; j < 3; ++j) f[n] += w[j] * std::log(1.0 + c[n][j]);
    }
    // Selection sort: repeatedly take the first index holding the maximum.
    std::vector<std::size_t> expected;
    std::vector<bool> used(c.size(), false);
    for (std::size_t p = 0; p < c.size(); ++p) {
      std::size_t best = c.size();
      for (std::size_t n = 0; n < c.size(); ++n) {
        if (!used[n] && (best == c.size() || f[n] > f[best])) best = n;
      }
      used[best] = true;
      expected.push_back(best);
    }
    EXPECT_EQ(rank(c, w).order, expected);
  }
}

TEST(Rank, PermutingCandidatesPermutesOrder) {
  SeededRng rng(4);
  for (int t = 0; t < 200; ++t) {
    std::vector<ScoreVector> c;
    for (int n = 0; n < 6; ++n) c.emplace_back(support::random_vector(rng, 2, 0.0, 5.0));
    const auto w = support::random_vector(rng, 2, 0.0, 1.0);
    const auto perm = support::random_permutation(rng, c.size());
    std::vector<ScoreVector> shuffled;
    for (auto i : perm) shuffled.push_back(c[i]);
    const auto a = rank(c, w).order;
    const auto b = rank(shuffled, w).order;
    for (std::size_t p = 0; p < a.size(); ++p) EXPECT_EQ(perm[b[p]], a[p]);
  }
}

TEST(Feasibility, BoundaryIsInclusive) {
  FusionAction a;
  a.weights = {0.5, 0.5};
  EXPECT_TRUE(is_feasible(a, 0.01));
  a.weights = {0.6, 0.6};
  EXPECT_FALSE(is_feasible(a, 0.01));
  // 0.75 + 0.25 + 0.125 is exact in binary, so the sum is exactly 1 + 0.125.
  a.weights = {0.75, 0.25, 0.125};
  EXPECT_TRUE(is_feasible(a, 0.125));
  a.weights = {0.75, 0.125};
  EXPECT_TRUE(is_feasible(a, 0.125));
}

TEST(ActionSpace, ValidatesConstruction) {
  EXPECT_THROW(ActionSpace({{0.1, 0.2}, {0.1}}, {{0, 1}, {0, 1}}, 0.01), ConfigError);
  EXPECT_THROW(ActionSpace({{0.2, 0.1}}, {{0, 1}}, 0.01), ConfigError);
  EXPECT_THROW(ActionSpace({{0.1, 0.2}}, {{0.15, 1}}, 0.01), ConfigError);
  EXPECT_THROW(ActionSpace({{0.1, 0.2}}, {{0, 1}}, 0.0), ConfigError);
  EXPECT_NO_THROW(ActionSpace({{0.1, 0.2}}, {{0, 1}}, 0.01));
}

TEST(ActionSpace, ActionResolvesBinValues) {
  const auto space = ActionSpace::uniform_grid(3, 5, 0.05, 0.45, 0.01);
  const std::vector<std::size_t> idx{0, 2, 4};
  const auto a = space.action(idx);
  EXPECT_EQ(a.bin_indices, idx);
  EXPECT_DOUBLE_EQ(a.weights[0], 0.05);
  EXPECT_DOUBLE_EQ(a.weights[1], 0.25);
  EXPECT_DOUBLE_EQ(a.weights[2], 0.45);
  const std::vector<std::size_t> bad{0, 5, 0};
  EXPECT_THROW(space.action(bad), DomainError);
}

TEST(EnumerateFeasible, TwoTaskHalfGrid) {
  const ActionSpace space({{0.0, 0.5, 1.0}, {0.0, 0.5, 1.0}}, {{0, 1}, {0, 1}}, 0.01);
  const auto acts = enumerate_feasible(space);
  ASSERT_EQ(acts.size(), 3u);
  EXPECT_EQ(acts[0].weights, (std::vector<double>{0.0, 1.0}));
  EXPECT_EQ(acts[1].weights, (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(acts[2].weights, (std::vector<double>{1.0, 0.0}));
}

TEST(EnumerateFeasible, VacuousToleranceKeepsEverything) {
  const auto space = ActionSpace::uniform_grid(3, 4, 0.1, 0.7, 3 * 0.7);
  EXPECT_EQ(enumerate_feasible(space).size(), 64u);
}

TEST(EnumerateFeasible, SingleTaskSingleBin) {
  const ActionSpace space({{1.0}}, {{1.0, 1.0}}, 0.01);
  const auto acts = enumerate_feasible(space);
  ASSERT_EQ(acts.size(), 1u);
  EXPECT_EQ(acts[0].weights, (std::vector<double>{1.0}));
}

TEST(EnumerateFeasible, CapIsEnforced) {
  const auto space = ActionSpace::uniform_grid(8, 10, 0.0, 1.0, 0.01);
  EXPECT_THROW(enumerate_feasible(space), DomainError);
  EXPECT_THROW(enumerate_feasible(ActionSpace::uniform_grid(3, 5, 0.0, 1.0, 0.01), 100), DomainError);
}

TEST(EnumerateFeasible, ClosedUnderPredicateAndLexicographic) {
  SeededRng rng(5);
  for (int t = 0; t < 30; ++t) {
    const std::size_t k = 1 + rng.below(4);
    const std::size_t b = 1 + rng.below(5);
    const double lo = rng.uniform(0.0, 0.3);
    const double hi = lo + rng.uniform(0.05, 0.8);
    const double tol = rng.uniform(0.001, 0.2);
    const auto space = ActionSpace::uniform_grid(k, b, lo, hi, tol);
    const auto acts = enumerate_feasible(space);
    std::set<std::vector<std::size_t>> returned;
    for (const auto& a : acts) {
      EXPECT_TRUE(is_feasible(a, tol));
      returned.insert(a.bin_indices);
    }
    for (std::size_t i = 1; i < acts.size(); ++i) EXPECT_LT(acts[i - 1].bin_indices, acts[i].bin_indices);
    std::size_t expected = 0;
    support::for_each_joint(k, b, [&](const std::vector<std::size_t>& idx) {
      double sum = 0.0;
      for (std::size_t j = 0; j < k; ++j) sum += space.bins()[j][idx[j]];
      if (std::abs(sum - 1.0) <= tol) {
        ++expected;
        EXPECT_TRUE(returned.count(idx));
      }
    });
    EXPECT_EQ(acts.size(), expected);
  }
}
