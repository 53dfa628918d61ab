#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "stylecodec/rng.h"

using namespace stylecodec;

TEST(Rng, SameSeedSameStream) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DerivingDoesNotAdvanceParent) {
    Rng a(7), b(7);
    (void)a.derive("mask");
    (void)a.derive(uint64_t{3});
    EXPECT_EQ(a.next_u64(), b.next_u64());
    EXPECT_EQ(a.derive("mask"), b.derive("mask"));
    EXPECT_FALSE(a.derive("mask") == a.derive("channel"));
    EXPECT_FALSE(a.derive(uint64_t{1}) == a.derive(uint64_t{2}));
}

TEST(Rng, SerializeRoundTrip) {
    Rng a(99);
    for (int i = 0; i < 10; ++i) a.normal();
    Rng b = Rng::deserialize(a.serialize());
    for (int i = 0; i < 50; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, UniformAndBelowRanges) {
    Rng r(3);
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        ASSERT_LT(r.below(7), 7u);
        const int k = r.range(-2, 2);
        ASSERT_GE(k, -2);
        ASSERT_LE(k, 2);
    }
}

TEST(Rng, NormalMoments) {
    Rng r(5);
    const int n = 200000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        s += x;
        s2 += x * x;
    }
    const double mean = s / n, var = s2 / n - mean * mean;
    EXPECT_NEAR(mean, 0.0, 4.0 / std::sqrt(n));
    EXPECT_NEAR(var, 1.0, 0.02);
}

TEST(Rng, CategoricalFrequencies) {
    Rng r(11);
    const std::vector<double> w = {1.0, 0.0, 3.0};
    std::vector<int> counts(3, 0);
    const int n = 40000;
    for (int i = 0; i < n; ++i) ++counts[r.categorical(w)];
    EXPECT_EQ(counts[1], 0);
    EXPECT_NEAR(counts[0] / double(n), 0.25, 0.01);
    EXPECT_NEAR(counts[2] / double(n), 0.75, 0.01);
}
