// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>

namespace searchlab
{

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30U)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27U)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31U);
}

/// Order-sensitive combination of seed components into one stream seed.
constexpr std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) noexcept
{
    std::uint64_t h = 0x243F6A8885A308D3ULL;
    for (auto p: parts)
        h = splitmix64(h ^ splitmix64(p));
    return h;
}

inline double uniform01(Rng& rng)
{
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

/// Inverse-CDF draw from a normalized probability vector.
inline std::size_t sample_categorical(std::span<const double> probs, Rng& rng)
{
    const double u = uniform01(rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i)
    {
        acc += probs[i];
        if (u < acc)
            return i;
    }
    // rounding left u above the cumulative sum; take the last positive entry
    for (std::size_t i = probs.size(); i-- > 0;)
        if (probs[i] > 0.0)
            return i;
    return 0;
}

} // namespace searchlab
