#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace volscreen {

// splitmix64 finalizer; full avalanche on 64 bits.
inline std::uint64_t mix64(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

// Documented seed splitter: every derived stream in the pipeline is
// hash64(parent_seed, index). Parallel generation with derived seeds is
// byte-identical to serial generation.
inline std::uint64_t hash64(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t h = mix64(seed + 0x9e3779b97f4a7c15ull);
    h ^= mix64(index + 0xbf58476d1ce4e5b9ull);
    return mix64(h);
}

// Deterministic generator. mt19937_64 output is pinned by the standard;
// the floating-point transforms below are ours, so streams are identical
// across platforms (std::*_distribution would not be).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1), 53-bit resolution
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

    // standard normal via Box-Muller (no spare caching)
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
    }

    // unbiased uniform integer in [0, n), n >= 1
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
        const std::uint64_t limit = max - max % n;
        std::uint64_t x = engine_();
        while (x >= limit) x = engine_();
        return x % n;
    }

    // Fisher-Yates
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace volscreen
