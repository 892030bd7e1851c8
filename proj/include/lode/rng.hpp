#pragma once

#include <cmath>
#include <cstdint>

namespace lode {

// SplitMix64 generator. Hand-rolled so that streams are identical across
// platforms and standard libraries; the whole state is one u64, which keeps
// checkpointing trivial.
struct Rng {
    uint64_t state = 0x853c49e6748fea9bull;

    Rng() = default;
    explicit Rng(uint64_t seed) : state(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint64_t below(uint64_t n) { return next_u64() % n; }

    // Box-Muller without caching; one state word stays the whole RNG state.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }
};

// Derive an independent stream from (seed, tag) pairs, e.g. one per scene.
inline uint64_t mix_seed(uint64_t seed, uint64_t tag) {
    uint64_t z = seed ^ (tag * 0xff51afd7ed558ccdull + 0x2545f4914f6cdd1dull);
    z = (z ^ (z >> 33)) * 0xc4ceb9fe1a85ec53ull;
    return z ^ (z >> 33);
}

} // namespace lode
