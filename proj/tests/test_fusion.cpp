#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "robustst/fusion.hpp"
#include "robustst/oracle.hpp"
#include "robustst/verify.hpp"

using namespace robustst;

namespace {

CategoricalDistribution random_distribution(std::size_t k, std::mt19937_64& rng, double scale = 2.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> l(k);
  for (double& v : l) v = n(rng);
  return CategoricalDistribution(l);
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST(Categorical, ProbabilitiesSumToOneAndAreInterior) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const auto p = random_distribution(5, rng).probabilities();
    EXPECT_NEAR(sum(p), 1.0, 1e-9);
    for (double v : p) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(Categorical, ShiftInvariance) {
  const CategoricalDistribution a({0.3, -1.2, 2.0});
  const CategoricalDistribution b({10.3, 8.8, 12.0});
  const auto pa = a.probabilities();
  const auto pb = b.probabilities();
  for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_NEAR(pa[k], pb[k], 1e-15);
}

TEST(KlCategorical, IdentityIsZero) {
  EXPECT_DOUBLE_EQ(kl_categorical(CategoricalDistribution::uniform(3), CategoricalDistribution::uniform(3)), 0.0);
}

TEST(KlCategorical, PointMassAgainstUniformIsLog3) {
  const auto p = CategoricalDistribution::from_probabilities(std::vector<double>{1.0, 0.0, 0.0});
  EXPECT_NEAR(kl_categorical(p, CategoricalDistribution::uniform(3)), std::log(3.0), 1e-15);
}

TEST(KlCategorical, MatchesHighPrecisionReference) {
  // 50-digit sum of p log(p/q) for p = softmax(0.3, -0.1, 0.5), q uniform.
  const double reference = 0.028513035660757322854923924203741910820151799654422;
  const double kl = kl_categorical(CategoricalDistribution({0.3, -0.1, 0.5}), CategoricalDistribution({0, 0, 0}));
  EXPECT_NEAR(kl, reference, 1e-15);
}

TEST(KlCategorical, NonNegativeAndZeroOnSelf) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const auto p = random_distribution(4, rng);
    const auto q = random_distribution(4, rng);
    EXPECT_GE(kl_categorical(p, q), 0.0);
    EXPECT_EQ(kl_categorical(p, p), 0.0);
  }
}

TEST(KlCategorical, LengthMismatchThrows) {
  EXPECT_THROW(kl_categorical(CategoricalDistribution::uniform(3), CategoricalDistribution::uniform(4)),
               DimensionError);
}

TEST(FuseCategorical, IdenticalInputsReturnInput) {
  const CategoricalDistribution p({0.4, -2.0, 1.5});
  for (double alpha : {0.0, 0.5, 3.0, 1e4}) {
    EXPECT_LT(tv_distance(fuse_categorical(p, p, alpha), p), 1e-15);
  }
}

TEST(FuseCategorical, AlphaZeroReturnsFirstExactly) {
  const CategoricalDistribution p1({0.4, -2.0, 1.5});
  const CategoricalDistribution p2({3.0, 1.0, -1.0});
  EXPECT_EQ(fuse_categorical(p1, p2, 0.0).logits(), p1.logits());
}

TEST(FuseCategorical, SymmetricPairGivesUniform) {
  const auto q = fuse_categorical(CategoricalDistribution({1, 0}), CategoricalDistribution({0, 1}), 1.0).probabilities();
  EXPECT_NEAR(q[0], 0.5, 1e-15);
  EXPECT_NEAR(q[1], 0.5, 1e-15);
}

TEST(FuseCategorical, ThreeClassFixtureMatchesIterativeMinimizer) {
  const CategoricalDistribution p1({2.0, 0.0, -1.0});
  const CategoricalDistribution p2({0.0, 1.0, 0.0});
  const auto ref = oracle::minimize_categorical(p1, p2, 3.0);
  ASSERT_TRUE(ref.converged);
  EXPECT_LT(tv_distance(fuse_categorical(p1, p2, 3.0), ref.value), 1e-6);
}

TEST(FuseCategorical, NegativeOrNonFiniteAlphaThrows) {
  const auto u = CategoricalDistribution::uniform(3);
  EXPECT_THROW(fuse_categorical(u, u, -0.1), ParameterError);
  EXPECT_THROW(fuse_categorical(u, u, std::nan("")), ParameterError);
  EXPECT_THROW(fuse_categorical(u, u, INFINITY), ParameterError);
}

TEST(FuseCategorical, EqualsProbabilitySpaceGeometricMean) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> alpha(0.0, 100.0);
  for (int i = 0; i < 200; ++i) {
    const auto p1 = random_distribution(5, rng);
    const auto p2 = random_distribution(5, rng);
    const double a = alpha(rng);
    const auto fused = fuse_categorical(p1, p2, a).probabilities();
    const auto geo = geometric_mean_probabilities(p1.probabilities(), p2.probabilities(), a);
    for (std::size_t k = 0; k < fused.size(); ++k) EXPECT_NEAR(fused[k], geo[k], 1e-10);
  }
}

TEST(FuseCategorical, ApproachesSecondMonotonicallyAsAlphaGrows) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 50; ++i) {
    const auto p1 = random_distribution(4, rng);
    const auto p2 = random_distribution(4, rng);
    double prev = tv_distance(p1, p2);
    for (double a : {1.0, 10.0, 100.0, 1e4}) {
      const double tv = tv_distance(fuse_categorical(p1, p2, a), p2);
      EXPECT_LE(tv, prev);
      prev = tv;
    }
    EXPECT_LT(prev, 1e-3);
  }
}

TEST(FuseCategorical, PermutationEquivariant) {
  std::mt19937_64 rng(9);
  std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  for (int i = 0; i < 50; ++i) {
    const auto p1 = random_distribution(5, rng);
    const auto p2 = random_distribution(5, rng);
    auto permute = [&](const CategoricalDistribution& d) {
      std::vector<double> l(5);
      for (std::size_t k = 0; k < 5; ++k) l[k] = d.logits()[perm[k]];
      return CategoricalDistribution(l);
    };
    const auto a = fuse_categorical(permute(p1), permute(p2), 2.5).probabilities();
    const auto b = permute(fuse_categorical(p1, p2, 2.5)).probabilities();
    for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(a[k], b[k], 1e-15);
  }
}

TEST(FuseCategorical, HugeAlphaIsWithinLimitOfSecond) {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 50; ++i) {
    const auto p1 = random_distribution(4, rng);
    const auto p2 = random_distribution(4, rng);
    EXPECT_LT(tv_distance(fuse_categorical(p1, p2, 1e6), p2), 1e-3);
  }
}

TEST(FuseBox, IdenticalInputs) {
  const BoundingBox b{1.5, 2.0, 3.0, 4.0};
  EXPECT_EQ(fuse_box(b, b, 7.0), b);
}

TEST(FuseBox, Midpoint) {
  EXPECT_EQ(fuse_box({0, 0, 10, 10}, {2, 2, 10, 10}, 1.0), (BoundingBox{1, 1, 10, 10}));
}

TEST(FuseBox, WeightedAverageFixture) {
  const BoundingBox r = fuse_box({0, 0, 8, 6}, {4, 2, 10, 10}, 3.0);
  EXPECT_DOUBLE_EQ(r.x, 3.0);
  EXPECT_DOUBLE_EQ(r.y, 1.5);
  EXPECT_DOUBLE_EQ(r.w, 9.5);
  EXPECT_DOUBLE_EQ(r.h, 9.0);
}

TEST(FuseBox, NegativeAlphaThrows) {
  EXPECT_THROW(fuse_box({0, 0, 1, 1}, {0, 0, 1, 1}, -1.0), ParameterError);
}

TEST(FuseBox, InvalidBoxThrows) {
  EXPECT_THROW(fuse_box({0, 0, 0, 1}, {0, 0, 1, 1}, 1.0), ParameterError);
}

TEST(FuseBox, HugeAlphaNearInitial) {
  const BoundingBox cur{3, 4, 5, 6}, init{10, 12, 2, 3};
  const auto r = fuse_box(cur, init, 1e6).as_array();
  const auto i = init.as_array();
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(r[j], i[j], 1e-3);
}

TEST(FuseGaussian, MeanIndependentOfSigma) {
  const BoundingBox a{1, 2, 3, 4}, b{5, 1, 7, 2};
  const auto ref = fuse_gaussian({a, 1.0}, {b, 1.0}, 2.0).mean;
  for (double s : {0.1, 10.0, 123.0}) EXPECT_EQ(fuse_gaussian({a, s}, {b, s}, 2.0).mean, ref);
}

TEST(FuseGaussian, MismatchedSigmaThrows) {
  EXPECT_THROW(fuse_gaussian({{0, 0, 1, 1}, 1.0}, {{0, 0, 1, 1}, 2.0}, 1.0), ParameterError);
}

TEST(AlphaSchedule, EndpointsAndMidpoint) {
  const AlphaSchedule s(100.0, 0.5, 1000);
  EXPECT_DOUBLE_EQ(alpha_at(s, 0), 100.0);
  EXPECT_DOUBLE_EQ(alpha_at(s, 1000), 0.5);
  EXPECT_DOUBLE_EQ(alpha_at(s, 500), 50.25);
  EXPECT_DOUBLE_EQ(alpha_at(s, 5000), 0.5);
}

TEST(AlphaSchedule, NonIncreasingAndContinuous) {
  const AlphaSchedule s(100.0, 0.5, 700);
  double prev = s.at(0);
  for (std::int64_t t = 1; t <= 1000; ++t) {
    EXPECT_LE(s.at(t), prev);
    EXPECT_LE(prev - s.at(t), 99.5 / 700.0 + 1e-12);
    prev = s.at(t);
  }
  EXPECT_NEAR(s.at(699), s.at(700), 99.5 / 700.0 + 1e-12);
}

TEST(AlphaSchedule, RejectsBadParameters) {
  EXPECT_THROW(AlphaSchedule(-1.0, 0.5, 10), ParameterError);
  EXPECT_THROW(AlphaSchedule(1.0, 0.5, 0), ParameterError);
}

TEST(SoftenedOneHot, BackgroundFixture) {
  const auto p = softened_one_hot(0, 0.1, 2).probabilities();
  ASSERT_EQ(p.size(), 3u);
  EXPECT_NEAR(p[0], 0.9, 1e-15);
  EXPECT_NEAR(p[1], 0.05, 1e-15);
  EXPECT_NEAR(p[2], 0.05, 1e-15);
}

TEST(SoftenedOneHot, ForegroundFixture) {
  const auto p = softened_one_hot(1, 0.2, 4).probabilities();
  EXPECT_NEAR(sum(p), 1.0, 1e-12);
  EXPECT_NEAR(p[1], 0.8, 1e-15);
  for (std::size_t k : {0u, 2u, 3u, 4u}) EXPECT_NEAR(p[k], 0.05, 1e-15);
}

TEST(SoftenedOneHot, AlwaysNormalized) {
  for (std::size_t c = 1; c < 8; ++c)
    for (double eps : {0.01, 0.3, 0.99})
      for (std::size_t i = 0; i <= c; ++i) EXPECT_NEAR(sum(softened_one_hot(i, eps, c).probabilities()), 1.0, 1e-12);
}

TEST(SoftenedOneHot, RejectsBadEpsilonOrIndex) {
  EXPECT_THROW(softened_one_hot(0, 0.0, 3), ParameterError);
  EXPECT_THROW(softened_one_hot(0, 1.0, 3), ParameterError);
  EXPECT_THROW(softened_one_hot(4, 0.1, 3), ParameterError);
}

TEST(Oracle, SelfFusionAndAlphaZero) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 20; ++i) {
    const auto p = random_distribution(4, rng);
    const auto q = random_distribution(4, rng);
    EXPECT_LT(tv_distance(oracle::minimize_categorical(p, p, 5.0).value, p), 1e-8);
    EXPECT_LT(tv_distance(oracle::minimize_categorical(p, q, 0.0).value, p), 1e-8);
  }
}

TEST(Oracle, GaussianAlphaZeroAndSigmaIndependence) {
  const BoundingBox a{1, 2, 3, 4}, b{9, 8, 7, 6};
  const auto r0 = oracle::minimize_gaussian(a, b, 0.0, 1.0).value.as_array();
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(r0[j], a.as_array()[j], 1e-12);
  const auto r1 = oracle::minimize_gaussian(a, b, 4.0, 0.1).value.as_array();
  const auto r2 = oracle::minimize_gaussian(a, b, 4.0, 10.0).value.as_array();
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(r1[j], r2[j], 1e-9);
}

TEST(Oracle, ObjectiveAtClosedFormIsNotAboveOracle) {
  for (const auto& t : random_categorical_trials(30, 99)) {
    const auto ref = oracle::minimize_categorical(t.p1, t.p2, t.alpha);
    const double closed = oracle::categorical_objective(fuse_categorical(t.p1, t.p2, t.alpha).probabilities(),
                                                        t.p1.probabilities(), t.p2.probabilities(), t.alpha);
    EXPECT_LE(closed, ref.objective + 1e-12 * (1.0 + t.alpha));
  }
}

TEST(VerifyTheorems, HundredTrialsAgree) {
  const TheoremCheck r = verify_theorems(100);
  EXPECT_TRUE(r.oracles_converged);
  EXPECT_LT(r.max_categorical_tv, 1e-6);
  EXPECT_LT(r.max_gaussian_error, 1e-6);
  EXPECT_LE(r.max_sigma_spread, 1e-9);
}
