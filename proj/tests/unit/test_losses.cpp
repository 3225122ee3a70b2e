#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "randreg/losses.hpp"
#include "randreg/random.hpp"
#include "test_support.hpp"

using namespace randreg;

TEST(Loss, SquaredErrorValues) {
    const LossSpec se = LossSpec::squared_error(0.1);
    EXPECT_DOUBLE_EQ(loss(se, 3.0, 1.0), 2.0);
    EXPECT_EQ(loss(se, 0.4, 0.4), 0.0);
    EXPECT_DOUBLE_EQ(loss_d1(se, 3.0, 1.0), 2.0);
    EXPECT_EQ(loss_d2(se, -7.0, 3.0), 1.0);
}

TEST(Loss, CrossEntropyValues) {
    const LossSpec ce = LossSpec::cross_entropy({0.1, 0.9}, 1.0);
    EXPECT_DOUBLE_EQ(loss(ce, 0.5, 1.0), std::log(2.0));
    // y / s^2 + (1 - y) / (1 - s)^2 at s = 0.5, y = 1 is 1 / 0.25.
    EXPECT_DOUBLE_EQ(loss_d2(ce, 0.5, 1.0), 4.0);
}

TEST(Loss, CrossEntropyRejectsOutOfRangeArguments) {
    const LossSpec ce = LossSpec::cross_entropy({0.1, 0.9}, 1.0);
    EXPECT_THROW((void)loss(ce, 0.0, 1.0), Error);
    EXPECT_THROW((void)loss(ce, 1.2, 1.0), Error);
    EXPECT_THROW((void)loss_d1(ce, 0.5, 1.5), Error);
    EXPECT_THROW((void)LossSpec::cross_entropy({0.0, 0.9}, 1.0), Error);
}

TEST(Loss, DerivativesMatchFiniteDifferences) {
    gen::Source src(1);
    const LossSpec se = LossSpec::squared_error(1.0);
    const LossSpec ce = LossSpec::cross_entropy({0.05, 0.95}, 1.0);
    const double h = 1e-6;
    for (int i = 0; i < 500; ++i) {
        const double s = src.uniform(0.1, 0.9), y = src.uniform(0.0, 1.0);
        for (const auto* spec : {&se, &ce}) {
            const double d1 = (loss(*spec, s + h, y) - loss(*spec, s - h, y)) / (2 * h);
            const double d2 = (loss_d1(*spec, s + h, y) - loss_d1(*spec, s - h, y)) / (2 * h);
            EXPECT_LE(gen::rel_err(d1, loss_d1(*spec, s, y)), 1e-6);
            EXPECT_LE(gen::rel_err(d2, loss_d2(*spec, s, y)), 1e-6);
        }
    }
}

TEST(Loss, StrongConvexityOnSampledPairs) {
    gen::Source src(2);
    const Interval iv{0.1, 0.9};
    const LossSpec ce = LossSpec::cross_entropy(iv, 1.0);
    const double alpha = certify_alpha(ce, 10000);
    for (int i = 0; i < 2000; ++i) {
        double s1 = src.uniform(iv.low, iv.high), s2 = src.uniform(iv.low, iv.high);
        if (s1 > s2) std::swap(s1, s2);
        const double y = src.uniform(0.0, 1.0);
        EXPECT_GE(loss_d1(ce, s2, y) - loss_d1(ce, s1, y), alpha * (s2 - s1) - 1e-12);
        for (const auto* spec : {&ce}) EXPECT_GE(loss_d2(*spec, s1, y), alpha - 1e-12);
    }
}

TEST(CertifyAlpha, SquaredErrorIsExactlyOne) { EXPECT_EQ(certify_alpha(LossSpec::squared_error(0.3), 10), 1.0); }

TEST(CertifyAlpha, CrossEntropyMatchesBruteForceGrid) {
    const Interval iv{0.1, 0.9};
    const LossSpec ce = LossSpec::cross_entropy(iv, 1.0);
    // Independent brute force over a dense (s, y) grid of the second-derivative formula.
    double brute = std::numeric_limits<double>::infinity();
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const double s = iv.low + (iv.high - iv.low) * i / (n - 1);
        for (int k = 0; k <= 20; ++k) {
            const double y = k / 20.0;
            brute = std::min(brute, y / (s * s) + (1 - y) / ((1 - s) * (1 - s)));
        }
    }
    EXPECT_NEAR(certify_alpha(ce, 10000), brute, 1e-6);
    EXPECT_NEAR(brute, 1.0 / 0.81, 1e-6);
    EXPECT_NEAR(ce.alpha, 1.0 / 0.81, 1e-12);
}

TEST(CertifyAlpha, DegenerateIntervalUsesSinglePoint) {
    const LossSpec ce = LossSpec::cross_entropy({0.5, 0.5}, 1.0);
    // Both labels give 1 / 0.25 at s = 0.5.
    EXPECT_DOUBLE_EQ(certify_alpha(ce, 100), 4.0);
}

TEST(CertifyAlpha, RequiresInterval) {
    LossSpec ce = LossSpec::cross_entropy({0.2, 0.8}, 1.0);
    ce.domain_interval.reset();
    EXPECT_THROW((void)certify_alpha(ce, 10), Error);
}

TEST(SubGaussian, SquaredErrorNoiseProxyIsExact) {
    // For y = g* + eps, the loss derivative at the truth is -eps.
    const LossSpec se = LossSpec::squared_error(0.25);
    CounterRng rng(3);
    for (int i = 0; i < 100; ++i) {
        const double eps = 0.25 * rng.normal();
        EXPECT_NEAR(loss_d1(se, 1.5, 1.5 + eps), -eps, 1e-15);
    }
    EXPECT_EQ(se.sigma, 0.25);
}

TEST(SubGaussian, ProxyRecoversGaussianScale) {
    CounterRng rng(4);
    std::vector<double> xs(200000);
    for (auto& v : xs) v = 0.7 * rng.normal();
    EXPECT_NEAR(subgaussian_proxy(xs), 0.7, 0.02);
}

TEST(SubGaussian, CrossEntropyEstimateIsFlaggedAndPositive) {
    const double sigma = estimate_cross_entropy_sigma({0.1, 0.9}, 10000, 1);
    EXPECT_GT(sigma, 0.0);
    EXPECT_TRUE(std::isfinite(sigma));
    const LossSpec ce = LossSpec::cross_entropy({0.1, 0.9}, sigma);
    EXPECT_TRUE(ce.sigma_estimated);
    EXPECT_EQ(estimate_cross_entropy_sigma({0.1, 0.9}, 10000, 1), sigma);
}
