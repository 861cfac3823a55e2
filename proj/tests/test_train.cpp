#include <gtest/gtest.h>

#include "oracles.hpp"
#include "test_util.hpp"

namespace pvse {
namespace {

using testing::BatchOf;
using testing::RandomSamples;
using testing::ToyModel;

const LossVariant kAllVariants[] = {LossVariant::kTriplet, LossVariant::kNpair, LossVariant::kSingleAngular,
                                    LossVariant::kBatchAngular, LossVariant::kNpairAngular};

class GradientCheck : public ::testing::TestWithParam<LossVariant> {};

TEST_P(GradientCheck, MatchesCentralDifferences) {
  LossConfig cfg;
  cfg.variant = GetParam();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ModelParams p = ToyModel(2, 2, 4, 2, 2, 5, seed);
    std::mt19937_64 rng(seed + 1000);
    auto samples = RandomSamples(p, 3, rng);
    EXPECT_LE(oracle::MaxGradientError(BatchOf(samples), p, cfg), 1e-4) << "seed " << seed;
  }
}

TEST_P(GradientCheck, MinibatchScopeMatchesCentralDifferences) {
  LossConfig cfg;
  cfg.variant = GetParam();
  ModelParams p = ToyModel(2, 2, 4, 2, 2, 5, 77);
  p.frequency_scope = FrequencyScope::kMinibatch;
  std::mt19937_64 rng(78);
  auto samples = RandomSamples(p, 4, rng);
  EXPECT_LE(oracle::MaxGradientError(BatchOf(samples), p, cfg), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(AllLosses, GradientCheck, ::testing::ValuesIn(kAllVariants),
                         [](const auto& info) { return ToString(info.param); });

TEST(LossGradients, ZeroTagMatrixIsFinite) {
  ModelParams p = ToyModel(2, 2, 4, 2, 2, 5, 3);
  p.tag_proj = Matrix(5, 4);
  std::mt19937_64 rng(4);
  auto samples = RandomSamples(p, 3, rng);
  ParamGradients g = LossGradients(BatchOf(samples), p, LossConfig{});
  EXPECT_TRUE(std::isfinite(g.loss));
  EXPECT_TRUE(AllFinite(g.tag_proj.data()));
  for (const auto& w : g.image_proj) EXPECT_TRUE(AllFinite(w.data()));
}

TEST(LossGradients, LambdaZeroEqualsNpair) {
  ModelParams p = ToyModel(2, 2, 4, 2, 2, 5, 5);
  std::mt19937_64 rng(6);
  auto samples = RandomSamples(p, 4, rng);
  LossConfig a, b;
  a.lambda = 0.0;
  b.variant = LossVariant::kNpair;
  ParamGradients ga = LossGradients(BatchOf(samples), p, a), gb = LossGradients(BatchOf(samples), p, b);
  EXPECT_EQ(ga.loss, gb.loss);
  EXPECT_EQ(ga.tag_proj, gb.tag_proj);
  EXPECT_EQ(ga.image_proj, gb.image_proj);
}

TEST(LossGradients, LossMatchesOracleOnEmbeddings) {
  ModelParams p = ToyModel(2, 3, 4, 2, 2, 6, 8);
  std::mt19937_64 rng(9);
  auto samples = RandomSamples(p, 5, rng);
  Matrix X(5, 6), V(5, 6);
  for (std::size_t n = 0; n < 5; ++n) {
    auto x = Normalized(ProjectPooled(samples[n].pooled, p).values());
    auto v = Normalized(EmbedTagSet(std::span<const std::size_t>(samples[n].tags), p).values());
    for (std::size_t k = 0; k < 6; ++k) {
      X(n, k) = x[k];
      V(n, k) = v[k];
    }
  }
  for (LossVariant v : kAllVariants) {
    LossConfig cfg;
    cfg.variant = v;
    EXPECT_NEAR(LossGradients(BatchOf(samples), p, cfg).loss, oracle::Loss(X, V, cfg), 1e-9);
  }
}

TEST(TrainConfig, LearningRateHalvesEveryFiveEpochs) {
  TrainConfig c;
  for (std::size_t e = 0; e < 5; ++e) EXPECT_DOUBLE_EQ(c.learning_rate(e), 0.01);
  for (std::size_t e = 5; e < 10; ++e) EXPECT_DOUBLE_EQ(c.learning_rate(e), 0.005);
  for (std::size_t e = 45; e < 50; ++e) EXPECT_DOUBLE_EQ(c.learning_rate(e), 0.01 * std::pow(0.5, 9));
}

TEST(EpochBatches, DropsTrailingSingleton) {
  std::mt19937_64 rng(1);
  auto b = EpochBatches(65, 32, rng);
  ASSERT_EQ(b.size(), 2u);
  std::vector<std::size_t> seen;
  for (const auto& batch : b) seen.insert(seen.end(), batch.begin(), batch.end());
  std::sort(seen.begin(), seen.end());
  EXPECT_EQ(std::adjacent_find(seen.begin(), seen.end()), seen.end());
  EXPECT_EQ(EpochBatches(66, 32, rng).size(), 3u);
}

class TrainSynthetic : public ::testing::Test {
 protected:
  static Dataset MakeData() {
    SynthSpec s;
    s.images = 64;
    s.tags_per_part = 4;
    s.abstract_tags = 2;
    s.feature_dim = 8;
    s.grid_rows = s.grid_cols = 4;
    s.height = s.width = 16;
    return GenerateSynthetic(s);
  }
  static TrainConfig Config() {
    TrainConfig t;
    t.epochs = 12;
    t.batch_size = 16;
    t.seed = 3;
    return t;
  }
};

TEST_F(TrainSynthetic, LossDecreasesAndTraceFollowsSchedule) {
  Dataset ds = MakeData();
  ModelShape shape;
  shape.embedding_dim = 16;
  TrainResult r = TrainOnDataset(ds, shape, Config(), LossConfig{});
  ASSERT_EQ(r.epoch_mean_loss.size(), 12u);
  EXPECT_LT(r.epoch_mean_loss.back(), r.epoch_mean_loss.front());
  EXPECT_EQ(r.trace.size(), 12u * 4u);
  for (const auto& row : r.trace) EXPECT_DOUBLE_EQ(row.lr, Config().learning_rate(row.epoch));
}

TEST_F(TrainSynthetic, SameSeedIsBitIdentical) {
  Dataset ds = MakeData();
  ModelShape shape;
  shape.embedding_dim = 16;
  TrainResult a = TrainOnDataset(ds, shape, Config(), LossConfig{});
  TrainResult b = TrainOnDataset(ds, shape, Config(), LossConfig{});
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t n = 0; n < a.trace.size(); ++n) EXPECT_EQ(a.trace[n].loss, b.trace[n].loss);
  EXPECT_EQ(a.params.tag_proj, b.params.tag_proj);
  EXPECT_EQ(a.params.image_proj, b.params.image_proj);
}

TEST(Train, NonFiniteLossReportsBatch) {
  ModelParams p = ToyModel(2, 2, 4, 2, 2, 5, 1);
  std::mt19937_64 rng(2);
  auto samples = RandomSamples(p, 4, rng);
  samples[1].pooled(0, 0) = std::numeric_limits<double>::quiet_NaN();
  TrainConfig t;
  t.epochs = 1;
  t.batch_size = 4;
  try {
    Train(p, samples, t, LossConfig{});
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.batch_index(), 0);
  }
}

TEST(Train, ShapeMismatchRejectedBeforeTraining) {
  ModelParams p = ToyModel(2, 2, 4, 2, 2, 5, 1);
  std::mt19937_64 rng(2);
  auto samples = RandomSamples(p, 4, rng);
  samples[2].pooled = Matrix(2, 3);
  EXPECT_THROW(Train(p, samples, TrainConfig{}, LossConfig{}), ArgumentError);
}

}  // namespace
}  // namespace pvse
