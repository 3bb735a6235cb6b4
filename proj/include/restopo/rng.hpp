#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace restopo {

// SplitMix64: the i-th output is mix(seed + i * 0x9E3779B97F4A7C15), so the
// stream is a pure function of (seed, counter). Gaussians use Box-Muller on
// two consecutive draws; no cached second variate, so every normal() call
// consumes exactly two counter values.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform on (0, 1]: 53 random mantissa bits, shifted off zero.
    double uniform() { return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::uint64_t state_;
};

// Derives an independent stream seed for a named sub-purpose of one run.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    SplitMix64 g(seed ^ (stream * 0xD1B54A32D192ED03ULL));
    return g.next_u64();
}

}  // namespace restopo
