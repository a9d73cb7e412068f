#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "safro/satisfaction.hpp"
#include "support.hpp"

using namespace safro;

namespace {

SatConfig random_sat(SeededRng& rng) {
  SatConfig c;
  c.gap_quantile = rng.uniform(0.05, 0.95);
  c.stability = rng.uniform(0.1, 100.0);
  c.temperature = rng.uniform(0.1, 5.0);
  c.alpha = rng.uniform(0.01, 0.99);
  return c;
}

RewardModelShape small_shape() {
  RewardModelShape s;
  s.context_dim = 3;
  s.hidden = {6, 5};
  s.schema.positions = 2;
  return s;
}

std::vector<RewardSample> random_samples(SeededRng& rng, const RewardModelShape& shape, std::size_t n) {
  std::vector<RewardSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({support::random_vector(rng, shape.context_dim, -1.0, 1.0),
                   support::random_vector(rng, shape.schema.dim(), 0.0, 1.0), rng.uniform(),
                   rng.uniform(0.1, 2.0)});
  }
  return out;
}

}  // namespace

TEST(GapBaseline, ConstantHistory) {
  for (double q : {0.0, 0.3, 0.6, 1.0}) EXPECT_EQ(gap_baseline({10.0, 10.0, 10.0}, q), 10.0);
}

TEST(GapBaseline, MedianOfThree) { EXPECT_EQ(gap_baseline({3.0, 1.0, 2.0}, 0.5), 2.0); }

TEST(GapBaseline, InterpolatedPercentileOfOneToHundred) {
  std::vector<double> h;
  for (int i = 100; i >= 1; --i) h.push_back(i);
  // Sorted position 0.6 * 99 = 59.4 lies between the values 60 and 61.
  EXPECT_NEAR(gap_baseline(h, 0.6), 60.0 + 0.4 * (61.0 - 60.0), 1e-12);
}

TEST(GapBaseline, RejectsEmptyHistory) { EXPECT_THROW(gap_baseline({}, 0.5), DomainError); }

TEST(GapScore, ReferenceValues) {
  EXPECT_EQ(gap_score(0.0, 5.0, 1.0, 2.0), 1.0);
  EXPECT_NEAR(gap_score((5.0 + 1.0) * 2.0, 5.0, 1.0, 2.0), std::exp(-1.0), 1e-15);
  EXPECT_LT(gap_score(1e9, 5.0, 1.0, 2.0), 1e-300);
}

TEST(GapScore, DependsOnlyOnNormalizedGap) {
  SeededRng rng(1);
  for (int t = 0; t < 1000; ++t) {
    const double g = rng.uniform(0.0, 1e4);
    const double mu = rng.uniform(1.0, 1e3);
    const double delta = rng.uniform(0.1, 10.0);
    const double temp = rng.uniform(0.1, 5.0);
    const double scale = rng.uniform(0.1, 10.0);
    // Scale g and (mu + delta) together, keeping delta as is by adjusting mu.
    const double mu2 = scale * (mu + delta) - delta;
    if (mu2 <= 0.0) continue;
    EXPECT_NEAR(gap_score(g, mu, delta, temp), gap_score(scale * g, mu2, delta, temp), 1e-12);
  }
}

TEST(SatisfactionReward, Examples) {
  SatConfig c;
  EXPECT_EQ(satisfaction_reward(1, 0.0, 1, 10.0, c), 0.0);
  EXPECT_EQ(satisfaction_reward(0, 0.0, 1, 10.0, c), 1.0);
  EXPECT_EQ(satisfaction_reward(0, std::numeric_limits<double>::max(), 0, 10.0, c), 0.0);
}

TEST(SatisfactionReward, PropertiesOverRandomParameterizations) {
  SeededRng rng(2);
  for (int t = 0; t < 10000; ++t) {
    const auto c = random_sat(rng);
    const double mu = rng.uniform(1.0, 1e4);
    const double gap = rng.uniform(0.0, 1e5);
    const int ret = rng.bernoulli(0.5);
    const double r = satisfaction_reward(0, gap, ret, mu, c);
    ASSERT_GE(r, 0.0);
    ASSERT_LE(r, 1.0);
    ASSERT_EQ(satisfaction_reward(1, gap, ret, mu, c), 0.0);
    ASSERT_LE(satisfaction_reward(0, gap + rng.uniform(0.0, 1e4), ret, mu, c), r);
    ASSERT_GE(satisfaction_reward(0, gap, 1, mu, c), satisfaction_reward(0, gap, 0, mu, c));

    auto c0 = c;
    c0.alpha = 0.0;
    ASSERT_EQ(satisfaction_reward(0, gap, ret, mu, c0), ret ? 1.0 : 0.0);
    auto c1 = c;
    c1.alpha = 1.0;
    ASSERT_EQ(satisfaction_reward(0, gap, ret, mu, c1), gap_score(gap, mu, c.stability, c.temperature));
  }
}

TEST(Confidence, Examples) {
  EXPECT_EQ(confidence(0, 0), 0.0);
  // e - 1 is not an integer; the identity ln(1 + (e - 1)) = 1 is checked on the formula directly.
  EXPECT_NEAR(std::log1p(std::exp(1.0) - 1.0), 1.0, 1e-15);
  EXPECT_GT(confidence(5, 5), confidence(1, 1));
  EXPECT_NEAR(confidence(2, 1), std::log(4.0), 1e-15);
  EXPECT_THROW(confidence(-1, 0), DomainError);
}

TEST(ListFeatures, LayoutAndPadding) {
  std::vector<Candidate> cands(3);
  for (std::size_t n = 0; n < 3; ++n) cands[n].scores = ScoreVector({static_cast<double>(n + 1), 0.0});
  RankedList list = support::list_from_order({2, 0, 1});
  list.fused_scores = {1.0, 3.0, 2.0};
  const std::vector<double> labels{0.1, 0.2, 0.3};
  ListFeatureSchema schema;
  schema.positions = 4;
  const auto f = list_features(cands, list, labels, schema);
  ASSERT_EQ(f.size(), 9u);
  EXPECT_EQ(f[0], 0.3);
  EXPECT_EQ(f[1], 3.0 / 4.0);
  EXPECT_EQ(f[2], 0.1);
  EXPECT_EQ(f[3], 1.0 / 2.0);
  EXPECT_EQ(f[6], 0.0);
  EXPECT_EQ(f[7], 0.0);
  EXPECT_EQ(f[8], 0.75);
}

TEST(RewardModel, ZeroNetworkPredictsZero) {
  RewardModel m(small_shape());
  const std::vector<double> ctx(3, 0.5);
  const std::vector<double> lf(m.shape().schema.dim(), 0.5);
  EXPECT_EQ(m.predict(ctx, lf), 0.0);
}

TEST(RewardModel, OutputIsClampedNotSquashed) {
  RewardModel m(small_shape());
  const std::vector<double> ctx(3, 0.0);
  const std::vector<double> lf(m.shape().schema.dim(), 0.0);
  // The final bias is the last parameter block; with zero inputs and zero
  // weights the output equals that bias.
  m.params().back() = 1.7;
  EXPECT_EQ(m.raw(ctx, lf), 1.7);
  EXPECT_EQ(m.predict(ctx, lf), 1.0);
  m.params().back() = 0.42;
  EXPECT_EQ(m.predict(ctx, lf), 0.42);
  m.params().back() = -0.3;
  EXPECT_EQ(m.predict(ctx, lf), 0.0);
}

TEST(RewardModel, RejectsMisalignedInput) {
  RewardModel m(small_shape());
  const std::vector<double> ctx(2, 0.0);
  const std::vector<double> lf(m.shape().schema.dim(), 0.0);
  EXPECT_THROW(m.predict(ctx, lf), DimensionError);
}

TEST(WeightedMse, ZeroConfidenceSampleDoesNotChangeObjective) {
  SeededRng rng(3);
  const auto m = RewardModel::initialized(small_shape(), rng.split("init"));
  auto data = random_samples(rng, m.shape(), 12);
  const double with_all = weighted_mse(m, data);
  auto extra = data;
  extra.push_back({support::random_vector(rng, 3, -1.0, 1.0), support::random_vector(rng, 7, 0.0, 1.0), 0.9, 0.0});
  EXPECT_EQ(weighted_mse(m, extra), with_all);
  EXPECT_EQ(weighted_mse_gradient(m, extra), weighted_mse_gradient(m, data));
}

TEST(WeightedMse, MatchesDirectFormula) {
  SeededRng rng(4);
  const auto m = RewardModel::initialized(small_shape(), rng.split("init"));
  const auto data = random_samples(rng, m.shape(), 9);
  double num = 0.0, den = 0.0;
  for (const auto& s : data) {
    const double e = m.raw(s.context, s.list_features) - s.target;
    num += s.confidence * e * e;
    den += s.confidence;
  }
  EXPECT_NEAR(weighted_mse(m, data), num / den, 1e-14);
}

TEST(WeightedMse, GradientMatchesCentralDifferences) {
  SeededRng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto m = RewardModel::initialized(small_shape(), rng.split("init", trial));
    const auto data = random_samples(rng, m.shape(), 8);
    const auto g = weighted_mse_gradient(m, data);
    const double h = 1e-6;
    for (std::size_t p = 0; p < m.params().size(); ++p) {
      const double saved = m.params()[p];
      m.params()[p] = saved + h;
      const double up = weighted_mse(m, data);
      m.params()[p] = saved - h;
      const double down = weighted_mse(m, data);
      m.params()[p] = saved;
      const double fd = (up - down) / (2.0 * h);
      EXPECT_LE(std::abs(fd - g[p]), 1e-4 * std::max(1.0, std::abs(fd))) << "param " << p;
    }
  }
}

TEST(TrainRewardModel, TargetsAlreadyMatchedLeaveParametersUnchanged) {
  SeededRng rng(6);
  const auto m = RewardModel::initialized(small_shape(), rng.split("init"));
  auto data = random_samples(rng, m.shape(), 20);
  for (auto& s : data) s.target = m.raw(s.context, s.list_features);
  RewardTrainConfig cfg;
  cfg.epochs = 5;
  const auto result = train_reward_model(m, data, cfg, rng.split("train"));
  EXPECT_LT(result.loss_trace.back(), 1e-20);
  for (std::size_t p = 0; p < m.params().size(); ++p) EXPECT_NEAR(result.model.params()[p], m.params()[p], 1e-12);
}

TEST(TrainRewardModel, FitsLinearTargets) {
  // Targets are an affine function of the inputs. A reference full-batch
  // least-squares fit (normal equations) reaches ~0 loss, so the trained
  // network should get well under 1e-3.
  SeededRng rng(7);
  RewardModelShape shape;
  shape.context_dim = 2;
  shape.hidden = {16};
  shape.schema.positions = 1;
  const std::vector<double> coef{0.3, -0.2, 0.25, 0.1, -0.15};
  ASSERT_EQ(shape.schema.dim(), 3u);
  std::vector<RewardSample> data;
  for (int i = 0; i < 256; ++i) {
    RewardSample s{support::random_vector(rng, 2, 0.0, 1.0), support::random_vector(rng, 3, 0.0, 1.0), 0.0,
                   rng.uniform(0.5, 1.5)};
    double t = 0.4;
    for (std::size_t j = 0; j < 2; ++j) t += coef[j] * s.context[j];
    for (std::size_t j = 0; j < 3; ++j) t += coef[2 + j] * s.list_features[j];
    s.target = t;
    data.push_back(s);
  }
  RewardTrainConfig cfg;
  cfg.epochs = 300;
  cfg.learning_rate = 0.02;
  cfg.batch_size = 32;
  const auto result = train_reward_model(RewardModel::initialized(shape, rng.split("init")), data, cfg,
                                         rng.split("train"));
  EXPECT_LT(result.loss_trace.back(), 1e-3);
  EXPECT_LT(result.loss_trace.back(), result.loss_trace.front());
}

TEST(TrainRewardModel, RejectsAllZeroConfidence) {
  SeededRng rng(8);
  const auto m = RewardModel::initialized(small_shape(), rng.split("init"));
  auto data = random_samples(rng, m.shape(), 4);
  for (auto& s : data) s.confidence = 0.0;
  EXPECT_THROW(train_reward_model(m, data, RewardTrainConfig{}, rng), DomainError);
}

TEST(RewardModel, CheckpointRoundTrip) {
  SeededRng rng(9);
  const auto m = RewardModel::initialized(small_shape(), rng.split("init"));
  const auto path = std::filesystem::temp_directory_path() / "safro_rm_test.bin";
  SatConfig sat;
  sat.alpha = 0.3;
  save_reward_model(path, m, sat);
  SatConfig back_sat;
  const auto back = load_reward_model(path, &back_sat);
  EXPECT_TRUE(back == m);
  EXPECT_EQ(back_sat.alpha, 0.3);
}
