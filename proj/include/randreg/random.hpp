#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>

namespace randreg {

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

/// SplitMix64 finalizer.
inline constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derive a stream key from a seed and a path of tags.
inline constexpr std::uint64_t derive_key(std::uint64_t seed, std::initializer_list<std::uint64_t> path) noexcept {
    std::uint64_t key = mix64(seed + kGolden);
    for (std::uint64_t tag : path) key = mix64(key ^ mix64(tag + 0x632be59bd9b4e019ULL));
    return key;
}

/// Counter-based splittable generator.
///
/// Output i of a stream is mix64(key + (i + 1) * kGolden), so any draw is a pure
/// function of (key, counter). Child streams are derived by hashing a tag into the
/// key; parallel replications that use distinct tags never share a stream.
/// Normal draws use Box-Muller on our own uniforms so results do not depend on the
/// standard library's distribution implementations.
class CounterRng {
public:
    using result_type = std::uint64_t;

    explicit CounterRng(std::uint64_t seed, std::initializer_list<std::uint64_t> path = {}) noexcept
        : key_(derive_key(seed, path)) {}

    [[nodiscard]] static CounterRng from_key(std::uint64_t key) noexcept {
        CounterRng rng(0);
        rng.key_ = key;
        return rng;
    }

    [[nodiscard]] CounterRng split(std::uint64_t tag) const noexcept {
        return from_key(mix64(key_ ^ mix64(tag + 0x632be59bd9b4e019ULL)));
    }

    [[nodiscard]] std::uint64_t key() const noexcept { return key_; }
    [[nodiscard]] std::uint64_t counter() const noexcept { return counter_; }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept { return next_u64(); }

    std::uint64_t next_u64() noexcept {
        ++counter_;
        return mix64(key_ + counter_ * kGolden);
    }

    /// Uniform on [0, 1).
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double low, double high) noexcept { return low + (high - low) * uniform(); }

    /// Uniform on (0, 1].
    double uniform_open_left() noexcept { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double radius = std::sqrt(-2.0 * std::log(uniform_open_left()));
        const double angle = 2.0 * std::numbers::pi * uniform();
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace randreg
