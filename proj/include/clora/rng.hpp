#pragma once

#include <cmath>
#include <cstdint>

namespace clora {

// Deterministic, platform-independent PRNG (xoshiro256++ seeded via splitmix64).
// std::normal_distribution is implementation-defined, so normal draws use a
// fixed Box-Muller recipe instead; identical seeds give bitwise-identical
// streams on every platform.
struct Rng {
    uint64_t s[4];

    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& si : s) {
            x += 0x9e3779b97f4a7c15ULL;
            uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
            si = z ^ (z >> 31);
        }
    }

    static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

    uint64_t next() {
        uint64_t result = rotl(s[0] + s[3], 23) + s[0];
        uint64_t t      = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = rotl(s[3], 45);
        return result;
    }

    // uniform double in [0, 1)
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // standard normal via Box-Muller; one value per call
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793238462643 * u2);
    }

    // uniform integer in [lo, hi] inclusive
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(uniform() * static_cast<double>(hi - lo + 1));
    }
};

}  // namespace clora
