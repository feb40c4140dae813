#pragma once

#include <cstdint>
#include <random>

namespace rsmoe {

using Rng = std::mt19937_64;

// splitmix64; used to derive independent streams from (seed, stream) without
// correlated low bits.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline Rng make_rng(uint64_t seed, uint64_t stream = 0) {
    return Rng(mix64(mix64(seed) ^ mix64(stream * 0x9e3779b97f4a7c15ull + 1)));
}

inline double uniform(Rng& g, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(g);
}

inline double normal(Rng& g, double mean, double stddev) {
    return std::normal_distribution<double>(mean, stddev)(g);
}

// uniform integer in [lo, hi] inclusive
inline int randint(Rng& g, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(g);
}

}  // namespace rsmoe
