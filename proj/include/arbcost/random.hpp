#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace arbcost {

/// Counter-based standard normal stream: draw i depends only on (seed, i),
/// so Monte Carlo work can be split across threads in any partition and
/// still see the same numbers.
class NormalStream {
public:
    explicit NormalStream(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    /// Uniform in (0, 1) for counter i; never returns 0 or 1.
    double uniform(std::uint64_t i) const {
        const std::uint64_t bits = mix(seed_ ^ mix(i + 0x632be59bd9b4e019ULL));
        return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Box-Muller (cosine branch) on the uniform pair (2i, 2i+1).
    double normal(std::uint64_t i) const {
        const double u1 = uniform(2 * i);
        const double u2 = uniform(2 * i + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    // splitmix64 finalizer
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
};

}  // namespace arbcost
