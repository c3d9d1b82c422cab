// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <searchlab/actor.hpp>
#include <searchlab/refiner.hpp>
#include <searchlab/synthenv.hpp>

#include <cmath>
#include <map>
#include <random>
#include <set>
#include <vector>

#include <doctest.h>

namespace searchlab::testing
{

// 0 -r0-> 1 -r1-> 2 is the gold chain of question 0. 3 -r0-> 4 and 4 -r1-> 5
// are off-chain facts.
inline KnowledgeWorld two_hop_world(double distractor_rate = 0.0, std::uint32_t top_k = 3)
{
    WorldConfig wc;
    wc.num_entities = 6;
    wc.num_relations = 2;
    wc.hop_count = 2;
    wc.top_k = top_k;
    wc.distractor_rate = distractor_rate;
    wc.seed = 11;
    wc.num_questions = 1;
    const Triple a { 0, 0, 1 };
    const Triple b { 1, 1, 2 };
    Question q { 0, 0, 2, { 0, 1 }, { a, b } };
    return KnowledgeWorld(wc, { a, b, { 3, 0, 4 }, { 4, 1, 5 } }, { q });
}

/// Builds a trajectory by issuing actions against the world with dummy logprobs.
inline Trajectory play(const KnowledgeWorld& world, QuestionId q, const std::vector<Action>& actions)
{
    Trajectory t(q);
    for (const auto& a: actions)
        extend(world, t, a, -1.0);
    return t;
}

inline ActorParams random_actor(const WorldConfig& wc, std::mt19937_64& rng, double scale = 1.0)
{
    auto p = ActorParams::zeros(wc);
    std::normal_distribution<double> n(0.0, scale);
    for (auto& w: p.weights)
        w = n(rng);
    return p;
}

inline RefinerParams random_refiner(std::mt19937_64& rng, double scale = 1.0)
{
    auto p = RefinerParams::zeros();
    std::normal_distribution<double> n(0.0, scale);
    for (auto& w: p.disc_weights)
        w = n(rng);
    for (auto& w: p.trim_weights)
        w = n(rng);
    return p;
}

/// Number of distinct directed paths between two entities in the fact graph,
/// found by plain depth-first search.
inline std::size_t count_fact_paths(const std::vector<Triple>& facts, EntityId from, EntityId to,
                                    std::size_t depth_limit = 64)
{
    if (from == to)
        return 1;
    if (depth_limit == 0)
        return 0;
    std::size_t n = 0;
    for (const auto& f: facts)
        if (f.subject == from)
            n += count_fact_paths(facts, f.object, to, depth_limit - 1);
    return n;
}

/// Per-cell z bound for a family of `cells` comparisons at overall level
/// `alpha`, from the Gaussian tail bound P(|Z| > z) <= 2 exp(-z^2 / 2).
inline double family_z(std::size_t cells, double alpha = 1e-3)
{
    return std::sqrt(2.0 * std::log(2.0 * double(std::max<std::size_t>(cells, 1)) / alpha));
}

/// Empirical frequencies against exact probabilities, cells with fewer than
/// five expected hits skipped.
inline void check_frequencies(const std::vector<double>& expected, const std::vector<std::size_t>& hits,
                              std::size_t n)
{
    std::size_t cells = 0;
    for (double p: expected)
        cells += p * double(n) >= 5.0 ? 1 : 0;
    const double z = family_z(cells);
    for (std::size_t y = 0; y < expected.size(); ++y)
    {
        const double p = expected[y];
        if (p * double(n) < 5.0)
            continue;
        const double freq = double(hits[y]) / double(n);
        const double se = std::sqrt(p * (1.0 - p) / double(n));
        CHECK(std::abs(freq - p) <= z * se);
    }
}

} // namespace searchlab::testing
