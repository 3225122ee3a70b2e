#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "randreg/error.hpp"
#include "randreg/random.hpp"

namespace randreg {

enum class LossFamily { SquaredError, CrossEntropy };

struct Interval {
    double low = 0.0;
    double high = 1.0;
};

/// Pointwise strongly convex loss l_y(s) with a certified curvature floor alpha and a
/// sub-Gaussian proxy sigma for l'_y at the truth.
struct LossSpec {
    LossFamily family = LossFamily::SquaredError;
    std::optional<Interval> domain_interval;
    double alpha = 1.0;
    double sigma = 1.0;
    /// True when sigma is a simulation-based stand-in rather than an exact noise scale.
    bool sigma_estimated = false;

    /// l(s, y) = (s - y)^2 / 2; alpha = 1 and sigma equals the additive noise proxy.
    static LossSpec squared_error(double noise_sigma) {
        require(noise_sigma >= 0.0, ErrorCode::InvalidArgument, "noise sigma must be non-negative");
        return {LossFamily::SquaredError, std::nullopt, 1.0, noise_sigma, false};
    }

    /// l(s, y) = -y log s - (1 - y) log(1 - s) on [low, high] inside (0, 1).
    static LossSpec cross_entropy(Interval interval, double sigma, bool sigma_estimated = true) {
        require(interval.low > 0.0 && interval.high < 1.0 && interval.low <= interval.high,
                ErrorCode::InvalidArgument, "cross-entropy interval must lie inside (0, 1)");
        const double alpha = std::min(1.0 / (interval.high * interval.high),
                                      1.0 / ((1.0 - interval.low) * (1.0 - interval.low)));
        return {LossFamily::CrossEntropy, interval, alpha, sigma, sigma_estimated};
    }
};

namespace detail {

inline void check_ce_args(double s, double y) {
    if (!(s > 0.0 && s < 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "cross-entropy prediction " + std::to_string(s) + " outside (0, 1)");
    }
    if (!(y >= 0.0 && y <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "cross-entropy label " + std::to_string(y) + " outside [0, 1]");
    }
}

}  // namespace detail

inline double loss(const LossSpec& spec, double s, double y) {
    if (spec.family == LossFamily::SquaredError) return 0.5 * (s - y) * (s - y);
    detail::check_ce_args(s, y);
    double out = 0.0;
    if (y > 0.0) out -= y * std::log(s);
    if (y < 1.0) out -= (1.0 - y) * std::log1p(-s);
    return out;
}

inline double loss_d1(const LossSpec& spec, double s, double y) {
    if (spec.family == LossFamily::SquaredError) return s - y;
    detail::check_ce_args(s, y);
    return -y / s + (1.0 - y) / (1.0 - s);
}

inline double loss_d2(const LossSpec& spec, double s, double y) {
    if (spec.family == LossFamily::SquaredError) return 1.0;
    detail::check_ce_args(s, y);
    return y / (s * s) + (1.0 - y) / ((1.0 - s) * (1.0 - s));
}

/// Minimum of l''_y(s) over an (s, y) grid. SE returns 1 exactly. For CE the curvature is
/// affine in y, so its minimum over y in [0, 1] sits at y in {0, 1}; s runs over
/// `grid_density` points spanning the interval including both endpoints.
inline double certify_alpha(const LossSpec& spec, std::size_t grid_density) {
    if (spec.family == LossFamily::SquaredError) return 1.0;
    require(spec.domain_interval.has_value(), ErrorCode::IncompatibleConfiguration,
            "cross-entropy certification needs a domain interval");
    require(grid_density >= 1, ErrorCode::InvalidArgument, "grid density must be positive");
    const Interval iv = *spec.domain_interval;
    double best = std::numeric_limits<double>::infinity();
    const std::size_t n = (iv.low == iv.high) ? 1 : std::max<std::size_t>(grid_density, 2);
    for (std::size_t i = 0; i < n; ++i) {
        const double s = (n == 1) ? iv.low
                                  : iv.low + (iv.high - iv.low) * static_cast<double>(i) / static_cast<double>(n - 1);
        for (double y : {0.0, 1.0}) best = std::min(best, loss_d2(spec, s, y));
    }
    if (!(best > 0.0)) throw Error(ErrorCode::NotStronglyConvex, "not strongly convex on interval");
    return best;
}

/// Gaussian-moment sub-Gaussian proxy: the largest sigma with E[xi^2k] = (2k-1)!! sigma^2k,
/// k = 1..4, over the centered sample.
inline double subgaussian_proxy(const std::vector<double>& samples) {
    require(samples.size() >= 2, ErrorCode::InsufficientData, "sub-Gaussian proxy needs samples");
    double mean = 0.0;
    for (double v : samples) mean += v;
    mean /= static_cast<double>(samples.size());
    double best = 0.0;
    double double_factorial = 1.0;
    for (int k = 1; k <= 4; ++k) {
        double_factorial *= static_cast<double>(2 * k - 1);
        double moment = 0.0;
        for (double v : samples) moment += std::pow(v - mean, 2 * k);
        moment /= static_cast<double>(samples.size());
        best = std::max(best, std::pow(moment / double_factorial, 1.0 / k));
    }
    return std::sqrt(best);
}

/// Stand-in sigma_l for cross-entropy: simulates l'_y(p) = (p - y) / (p (1 - p)) at the
/// truth, with p uniform on the interval and y ~ Bernoulli(p).
inline double estimate_cross_entropy_sigma(Interval interval, std::size_t draws = 10000, std::uint64_t seed = 0) {
    require(interval.low > 0.0 && interval.high < 1.0 && interval.low <= interval.high, ErrorCode::InvalidArgument,
            "cross-entropy interval must lie inside (0, 1)");
    CounterRng rng(seed, {0x63657369ULL});
    std::vector<double> xi(draws);
    for (auto& v : xi) {
        const double p = rng.uniform(interval.low, interval.high);
        const double y = rng.uniform() < p ? 1.0 : 0.0;
        v = (p - y) / (p * (1.0 - p));
    }
    return subgaussian_proxy(xi);
}

}  // namespace randreg
