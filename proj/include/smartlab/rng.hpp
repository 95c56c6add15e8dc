#pragma once

#include <cstdint>
#include <random>

namespace smartlab {

// Deterministic seed splitting. Every parallel work item (atom, path, sample
// point) draws from its own engine seeded as splitmix64(master ^ mix(item)),
// so results do not depend on the number of worker threads. OMP_NUM_THREADS
// only controls how the items are distributed.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::mt19937_64 engine_for(std::uint64_t master, std::uint64_t item) {
    return std::mt19937_64(splitmix64(master ^ splitmix64(item)));
}

// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& rng, double a, double b) {
    return a + (b - a) * uniform01(rng);
}

inline int rademacher(std::mt19937_64& rng) {
    return (rng() & 1ull) ? 1 : -1;
}

inline double gaussian(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    return n(rng);
}

} // namespace smartlab
