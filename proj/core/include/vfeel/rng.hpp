/**
 * Deterministic random number generation.
 *
 * All stochastic code in the library draws through Rng so that a run is
 * reproducible bit-for-bit from a single seed. Gaussian variates use
 * Box-Muller on top of mt19937_64 instead of std::normal_distribution,
 * whose output is implementation-defined.
 */
#ifndef VFEEL_RNG_HPP
#define VFEEL_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>

namespace vfeel {

/// Mixes a base seed with a stream id into an independent-looking seed
/// (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Standard normal variate (Box-Muller, caches the spare).
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * M_PI * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    /// Uniform integer in [0, bound), bound >= 1. Rejection sampling keeps
    /// the distribution exact and the draw sequence platform-stable.
    std::uint64_t uniform_index(std::uint64_t bound) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t value = 0;
        do {
            value = engine_();
        } while (value >= limit);
        return value % bound;
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace vfeel

#endif
