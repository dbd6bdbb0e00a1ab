#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace trafficrect {

/// Counter-based generator: every output is a pure function of
/// (key, stream, counter), so substream k can be replayed on any thread or
/// platform without sharing state. The mixer is the SplitMix64 finalizer
/// applied to a Weyl sequence over the combined counter.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t key, std::uint64_t stream = 0) noexcept
        : key_(key), stream_(stream) {}

    std::uint64_t next_u64() noexcept {
        return mix(key_ ^ mix(stream_ + 0x632BE59BD9B4E019ULL) ^ (0x9E3779B97F4A7C15ULL * ++counter_));
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer on [0, n) without modulo bias.
    std::uint64_t below(std::uint64_t n) noexcept {
        const std::uint64_t limit = n == 0 ? 0 : (~std::uint64_t{0} - (~std::uint64_t{0} % n));
        for (;;) {
            const std::uint64_t x = next_u64();
            if (x < limit) return x % n;
        }
    }

    /// Standard normal via Box-Muller (one draw per call, no cached spare).
    double normal() noexcept {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double sigma) noexcept { return mean + sigma * normal(); }

    std::uint64_t counter() const noexcept { return counter_; }

private:
    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
};

}  // namespace trafficrect
