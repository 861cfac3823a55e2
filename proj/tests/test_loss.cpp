#include <gtest/gtest.h>

#include <numbers>

#include "oracles.hpp"
#include "test_util.hpp"

namespace pvse {
namespace {

using testing::RandomMatrix;
using testing::RandomUnit;

constexpr double kDeg45 = std::numbers::pi / 4.0;

Matrix RowsOf(std::initializer_list<std::vector<double>> rows) {
  Matrix m(rows.size(), rows.begin()->size());
  std::size_t r = 0;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) m(r, c) = row[c];
    ++r;
  }
  return m;
}

LossConfig Config(LossVariant v) {
  LossConfig c;
  c.variant = v;
  return c;
}

const LossVariant kAllVariants[] = {LossVariant::kTriplet, LossVariant::kNpair, LossVariant::kSingleAngular,
                                    LossVariant::kBatchAngular, LossVariant::kNpairAngular};

TEST(FAng, HandExamples) {
  std::vector<double> a{1, 0, 0}, n{0, 1, 0};
  EXPECT_NEAR(FAng(a, a, n, kDeg45), -4.0, 1e-12);
  EXPECT_NEAR(FAng(a, a, a, kDeg45), 4.0, 1e-12);
}

TEST(FAng, ConstantOffsetFromGeometricForm) {
  std::mt19937_64 rng(1);
  for (double deg : {15.0, 36.0, 45.0}) {
    const double alpha = deg * std::numbers::pi / 180.0, t2 = std::pow(std::tan(alpha), 2);
    for (int trial = 0; trial < 200; ++trial) {
      auto a = RandomUnit(6, rng), p = RandomUnit(6, rng), n = RandomUnit(6, rng);
      double dap = 0, dnc = 0;
      for (int k = 0; k < 6; ++k) {
        dap += (a[k] - p[k]) * (a[k] - p[k]);
        double c = 0.5 * (a[k] + p[k]);
        dnc += (n[k] - c) * (n[k] - c);
      }
      double geometric = dap - 4.0 * dnc * t2;
      EXPECT_NEAR(geometric - FAng(a, p, n, alpha), 2.0 - 6.0 * t2, 1e-9);
    }
  }
}

TEST(NpairLoss, SingletonBatchIsZero) {
  Matrix x = RowsOf({{1, 0}});
  EXPECT_EQ(NpairLoss(x, x), 0.0);
  EXPECT_EQ(BatchAngularLoss(x, x, kDeg45), 0.0);
  EXPECT_EQ(NpairAngularLoss(x, x, 1.0, kDeg45), 0.0);
}

TEST(NpairLoss, OrthogonalPairsHandValue) {
  Matrix x = RowsOf({{1, 0}, {0, 1}});
  EXPECT_NEAR(NpairLoss(x, x), std::log(1.0 + std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(NpairLoss(x, x), 0.3133, 1e-4);
}

TEST(Losses, MatchLoopOraclesOnRandomBatches) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t N = 2 + trial % 5;
    Matrix X = NormalizeRows(RandomMatrix(N, 6, rng)), V = NormalizeRows(RandomMatrix(N, 6, rng));
    for (LossVariant v : kAllVariants) {
      LossConfig cfg = Config(v);
      EXPECT_NEAR(EvaluateLoss(X, V, cfg), oracle::Loss(X, V, cfg), 1e-9) << ToString(v) << " N=" << N;
    }
  }
}

TEST(BatchAngularLoss, TwoSampleHandPlugIn) {
  Matrix X = RowsOf({{1, 0, 0}, {0, 1, 0}}), V = RowsOf({{0.6, 0.8, 0}, {0, 0, 1}});
  const double a = 36.0 * std::numbers::pi / 180.0;
  double f1 = FAng(X.row(0), V.row(0), V.row(1), a), f2 = FAng(X.row(1), V.row(1), V.row(0), a);
  double g1 = FAng(V.row(0), X.row(0), X.row(1), a), g2 = FAng(V.row(1), X.row(1), X.row(0), a);
  double expect = (std::log1p(std::exp(f1)) + std::log1p(std::exp(f2)) + std::log1p(std::exp(g1)) +
                   std::log1p(std::exp(g2))) / 4.0;
  EXPECT_NEAR(BatchAngularLoss(X, V, a), expect, 1e-12);
}

TEST(Losses, InvariantToPreNormalisationScale) {
  std::mt19937_64 rng(3);
  Matrix X = RandomMatrix(4, 5, rng), V = RandomMatrix(4, 5, rng);
  Matrix X7 = X;
  for (double& v : X7.data()) v *= 7.0;
  for (LossVariant v : kAllVariants) {
    LossConfig cfg = Config(v);
    EXPECT_NEAR(EvaluateLoss(NormalizeRows(X), NormalizeRows(V), cfg),
                EvaluateLoss(NormalizeRows(X7), NormalizeRows(V), cfg), 1e-12);
  }
}

TEST(NpairAngularLoss, LambdaZeroIsNpair) {
  std::mt19937_64 rng(4);
  Matrix X = NormalizeRows(RandomMatrix(5, 4, rng)), V = NormalizeRows(RandomMatrix(5, 4, rng));
  Matrix ga, gt, ha, ht;
  EXPECT_EQ(NpairAngularLoss(X, V, 0.0, 0.6, &ga, &gt), NpairLoss(X, V, &ha, &ht));
  EXPECT_EQ(ga, ha);
  EXPECT_EQ(gt, ht);
  EXPECT_NEAR(NpairAngularLoss(X, V, 2.0, 0.6), oracle::Npair(X, V) + 2.0 * oracle::BatchAngular(X, V, 0.6), 1e-9);
}

TEST(TripletLoss, Examples) {
  std::vector<double> a{1, 0}, n{0, 1};
  EXPECT_EQ(TripletLoss(a, a, n, 0.2), 0.0);
  EXPECT_NEAR(TripletLoss(a, n, a, 0.2), 2.2, 1e-12);
}

TEST(SingleAngularLoss, OrthogonalNegative) {
  std::vector<double> a{1, 0}, n{0, 1};
  EXPECT_NEAR(SingleAngularLoss(a, a, n, kDeg45), std::log1p(std::exp(-4.0)), 1e-12);
  EXPECT_NEAR(SingleAngularLoss(a, a, n, kDeg45), 0.0181, 1e-4);
}

TEST(LogOnePlusSumExp, StableForLargeInputs) {
  std::vector<double> z{1000.0, 999.0};
  double v = detail::LogOnePlusSumExp(z);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, 1000.0 + std::log1p(std::exp(-1.0)), 1e-9);
  std::vector<double> small{-800.0};
  EXPECT_NEAR(detail::LogOnePlusSumExp(small), 0.0, 1e-300);
}

// Gradients of each loss with respect to its unit-vector inputs.
TEST(Losses, InputGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  const double h = 1e-6;
  for (LossVariant v : kAllVariants) {
    LossConfig cfg = Config(v);
    Matrix X = NormalizeRows(RandomMatrix(4, 3, rng)), V = NormalizeRows(RandomMatrix(4, 3, rng));
    Matrix gx, gv;
    EvaluateLoss(X, V, cfg, &gx, &gv);
    for (Matrix* m : {&X, &V}) {
      const Matrix& g = m == &X ? gx : gv;
      for (std::size_t k = 0; k < m->size(); ++k) {
        double saved = m->data()[k];
        m->data()[k] = saved + h;
        double up = oracle::Loss(X, V, cfg);
        m->data()[k] = saved - h;
        double down = oracle::Loss(X, V, cfg);
        m->data()[k] = saved;
        EXPECT_NEAR(g.data()[k], (up - down) / (2 * h), 1e-6) << ToString(v);
      }
    }
  }
}

TEST(LossConfig, ParseAndValidate) {
  for (LossVariant v : kAllVariants) EXPECT_EQ(ParseLossVariant(ToString(v)), v);
  EXPECT_THROW(ParseLossVariant("hinge"), ArgumentError);
  LossConfig c;
  c.alpha_deg = 95;
  EXPECT_THROW(c.validate(), ArgumentError);
}

}  // namespace
}  // namespace pvse
