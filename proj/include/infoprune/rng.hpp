#pragma once

#include <cmath>
#include <cstdint>

namespace infoprune {

/// Deterministic pseudo-random stream (splitmix64 core). Distributions are
/// implemented by hand so that every seeded sequence is bit-reproducible
/// across compilers and standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t nextU64() {
        state_ += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double nextUniform() {
        return static_cast<double>(nextU64() >> 11) * 0x1.0p-53;
    }

    /// Uniform in [lo, hi).
    double nextUniform(double lo, double hi) {
        return lo + (hi - lo) * nextUniform();
    }

    /// Standard normal via Box-Muller (one value per call; pair cached).
    double nextGaussian() {
        if (hasSpare_) {
            hasSpare_ = false;
            return spare_;
        }
        double u1 = nextUniform();
        double u2 = nextUniform();
        while (u1 <= 0.0) u1 = nextUniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 6.283185307179586476925286766559 * u2;
        spare_ = radius * std::sin(angle);
        hasSpare_ = true;
        return radius * std::cos(angle);
    }

    /// Uniform integer in [0, bound). bound must be > 0.
    std::uint64_t nextBounded(std::uint64_t bound) {
        // modulo bias is irrelevant at the scales used here
        return nextU64() % bound;
    }

    /// Derive an independent stream, e.g. one per layer or per purpose.
    Rng fork(std::uint64_t streamTag) {
        return Rng(nextU64() ^ (streamTag * 0xD1B54A32D192ED03ull));
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool hasSpare_ = false;
};

} // namespace infoprune
