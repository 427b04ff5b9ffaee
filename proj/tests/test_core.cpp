#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "vprb/core.hpp"
#include "vprb/random.hpp"

using namespace vprb;

TEST(L2Normalize, PythagoreanTriple) {
  const auto n = l2_normalize(Vector{3, 4});
  EXPECT_DOUBLE_EQ(n.values[0], 0.6);
  EXPECT_DOUBLE_EQ(n.values[1], 0.8);
  EXPECT_DOUBLE_EQ(n.norm, 5.0);
  EXPECT_FALSE(n.degenerate);
}

TEST(L2Normalize, ZeroVectorIsFlagged) {
  const auto n = l2_normalize(Vector{0, 0});
  EXPECT_EQ(n.values, (Vector{0, 0}));
  EXPECT_TRUE(n.degenerate);
}

TEST(L2Normalize, Symmetric) {
  const auto n = l2_normalize(Vector{1, 1, 1, 1});
  for (double x : n.values) EXPECT_DOUBLE_EQ(x, 0.5);
}

TEST(L2Normalize, RejectsNonFinite) {
  EXPECT_THROW(l2_normalize(Vector{1, std::numeric_limits<double>::quiet_NaN()}), InvalidInput);
  EXPECT_THROW(l2_normalize(Vector{INFINITY, 0}), InvalidInput);
}

TEST(L2Normalize, UnitNormAndIdempotent) {
  auto& rng = oracle::test_rng();
  for (int t = 0; t < 50; ++t) {
    const Vector v = oracle::random_vector(rng, 1 + t % 17, -5, 5);
    const auto once = l2_normalize(v);
    EXPECT_NEAR(l2_norm(once.values), 1.0, 1e-12);
    const auto twice = l2_normalize(once.values);
    EXPECT_LT(oracle::max_abs_diff(once.values, twice.values), 1e-15);
  }
}

TEST(L2Normalize, BackwardMatchesFiniteDifferences) {
  auto& rng = oracle::test_rng();
  for (int t = 0; t < 20; ++t) {
    const Vector v = oracle::random_vector(rng, 6, -2, 2);
    const Vector w = oracle::random_vector(rng, 6, -1, 1);
    auto f = [&](const Vector& x) { return dot(l2_normalize(x).values, w); };
    const Vector analytic = l2_normalize_backward(l2_normalize(v), w);
    EXPECT_LT(oracle::max_rel_error(analytic, oracle::numeric_gradient(f, v)), 1e-7);
  }
}

TEST(L2Distance, Examples) {
  EXPECT_DOUBLE_EQ(l2_distance(Vector{1, 0}, Vector{0, 1}), std::sqrt(2.0));
  EXPECT_EQ(l2_distance(Vector{0.2, 0.9}, Vector{0.2, 0.9}), 0.0);
  EXPECT_DOUBLE_EQ(l2_distance(Vector{1, 2, 3}, Vector{4, 6, 3}), 5.0);
}

TEST(L2Distance, LengthMismatch) {
  EXPECT_THROW(l2_distance(Vector{1, 2}, Vector{1, 2, 3}), DimensionError);
}

TEST(L2Distance, MetricAxiomsOnRandomVectors) {
  auto& rng = oracle::test_rng();
  for (int t = 0; t < 100; ++t) {
    const Vector a = oracle::random_vector(rng, 5, -3, 3);
    const Vector b = oracle::random_vector(rng, 5, -3, 3);
    const Vector c = oracle::random_vector(rng, 5, -3, 3);
    EXPECT_GE(l2_distance(a, b), 0.0);
    EXPECT_EQ(l2_distance(a, b), l2_distance(b, a));
    EXPECT_LE(l2_distance(a, c), l2_distance(a, b) + l2_distance(b, c) + 1e-12);
  }
}

TEST(GeoDistance, Examples) {
  EXPECT_DOUBLE_EQ(geo_distance({0, 0, 0, 0}, {3, 4, 0, 0}), 5.0);
  EXPECT_EQ(geo_distance({1, 2, 3, 0}, {1, 2, 3, 0}), 0.0);
  EXPECT_DOUBLE_EQ(geo_distance({1, 1, 1, 0}, {2, 2, 2, 0}), std::sqrt(3.0));
}

TEST(GeoDistance, IgnoresTimestamp) {
  EXPECT_EQ(geo_distance({1, 2, 3, 0}, {1, 2, 3, 1e6}), 0.0);
}

TEST(FeatureMap, LayoutIsLocationMajor) {
  FeatureMap m(2, 3, 4);
  m.at(1, 2, 3) = 7.0;
  EXPECT_EQ(m.values()[(1 * 3 + 2) * 4 + 3], 7.0);
  EXPECT_EQ(m.location(5)[3], 7.0);
  EXPECT_EQ(m.locations(), 6u);
}

TEST(FeatureMap, ValidateRejectsBadMaps) {
  EXPECT_THROW(validate(FeatureMap()), InvalidInput);
  FeatureMap m(1, 1, 2);
  m.at(0, 0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(validate(m), InvalidInput);
  EXPECT_THROW(FeatureMap(2, 2, 2, Vector(3, 0.0)), DimensionError);
}

TEST(Random, SeededStreamsRepeat) {
  Rng a(derive_seed(5, 1)), b(derive_seed(5, 1)), c(derive_seed(5, 2));
  for (int i = 0; i < 10; ++i) {
    const double x = uniform01(a);
    EXPECT_EQ(x, uniform01(b));
    EXPECT_GE(x, 0.0);
    EXPECT_LT(x, 1.0);
  }
  EXPECT_NE(uniform01(a), uniform01(c));
}

TEST(Random, StateRoundTrip) {
  Rng a(42);
  for (int i = 0; i < 7; ++i) a();
  Rng b = load_rng(save_rng(a));
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a(), b());
}

TEST(Random, UniformIndexInRange) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(uniform_index(rng, 7), 7u);
}
