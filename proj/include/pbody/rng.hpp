#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace pbody {

using Rng = std::mt19937_64;

// Derives an independent stream seed from a root seed, a stream name and up
// to two indices. Streams with different (name, a, b) never share state, so
// work split by index reproduces the same draws in any order.
std::uint64_t stream_seed(std::uint64_t seed, std::string_view stream, std::uint64_t a = 0,
                          std::uint64_t b = 0);

inline Rng make_rng(std::uint64_t seed, std::string_view stream, std::uint64_t a = 0,
                    std::uint64_t b = 0)
{
    return Rng(stream_seed(seed, stream, a, b));
}

inline double uniform(Rng& rng, double lo, double hi)
{
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double standard_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

inline bool bernoulli(Rng& rng, double p) { return p > 0.0 && uniform(rng, 0.0, 1.0) < p; }

inline int uniform_int(Rng& rng, int lo, int hi_inclusive)
{
    return std::uniform_int_distribution<int>(lo, hi_inclusive)(rng);
}

}  // namespace pbody
