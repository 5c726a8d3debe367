#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace sonalign {

// Deterministic PRNG used everywhere randomness is needed. Self-contained so
// streams are reproducible across standard libraries and platforms
// (std::uniform_*_distribution is implementation-defined).
// Core is splitmix64; state advances one 64-bit word per draw.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform integer in [0, bound), bound >= 1; Lemire-style rejection-free
    // for our purposes (bias < 2^-32 is irrelevant at desk scale, but keep the
    // widening multiply so draws are cheap and uniform within 2^-64)
    uint64_t next_below(uint64_t bound) {
        // 128-bit multiply-shift
        unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * bound;
        return static_cast<uint64_t>(m >> 64);
    }

    // uniform double in [0, 1)
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform double in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // standard normal, Box-Muller (two uniforms per call, no cached spare so
    // the stream position is call-count deterministic)
    double gauss() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // derive an independent stream for a sub-task; mixing constant keeps
    // (seed, tag) pairs from colliding with sequential draws
    static uint64_t derive(uint64_t seed, uint64_t tag) {
        Rng r(seed ^ (0x632be59bd9b4e019ULL + tag * 0x9e3779b97f4a7c15ULL));
        return r.next_u64();
    }

private:
    uint64_t state_;
};

template <typename T>
inline void shuffle(std::vector<T>& v, Rng& rng) {
    for (size_t i = v.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(rng.next_below(i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace sonalign
