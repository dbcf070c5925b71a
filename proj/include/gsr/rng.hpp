#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace gsr {

// Deterministic random source. All distributions are implemented explicitly
// on top of mt19937_64 so that streams are bit-reproducible across standard
// library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    // Uniform in [0, 1).
    double uniform() {
        return (gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller.
    double normal() {
        double u1 = 1.0 - uniform(); // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    // Uniform integer in [0, n).
    uint64_t integer(uint64_t n) {
        // Rejection sampling to avoid modulo bias.
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v;
        do {
            v = gen_();
        } while (v >= limit);
        return v % n;
    }

    uint64_t raw() { return gen_(); }

    // Derive an independent deterministic stream.
    Rng fork(uint64_t stream) {
        uint64_t s = gen_() ^ (stream * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull);
        return Rng(s);
    }

private:
    std::mt19937_64 gen_;
};

} // namespace gsr
