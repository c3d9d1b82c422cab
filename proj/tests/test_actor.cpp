// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

#include <searchlab/errors.hpp>
#include <searchlab/oracle.hpp>

#include <cmath>
#include <sstream>

using namespace searchlab;
using namespace searchlab::testing;

TEST_CASE("legal actions at the start state")
{
    const auto w = two_hop_world();
    const auto& q = w.question(0);
    const auto s = ActorState::initial(q);
    const auto acts = legal_actions(w, s, 4);
    // think, search(0, r0), search(0, r1), answer(0)
    REQUIRE(acts.size() == 4);
    CHECK(acts[0].kind == ActionKind::Think);
    CHECK(acts[1] == Action::search({ 0, 0 }));
    CHECK(acts[2] == Action::search({ 0, 1 }));
    CHECK(acts[3] == Action::answer(0));
    CHECK(legal_actions(w, s, 0).empty());
}

TEST_CASE("uniform policy gives log(1/n) to a single step")
{
    const auto w = two_hop_world();
    const auto params = ActorParams::zeros(w.config());
    const auto t = play(w, 0, { Action::answer(0) });
    CHECK(logprob(params, w, t, 4) == doctest::Approx(std::log(1.0 / 4.0)).epsilon(1e-15));
}

TEST_CASE("action distributions are normalized and positive")
{
    WorldConfig wc;
    wc.seed = 4;
    const auto w = generate_world(wc);
    std::mt19937_64 gen(1);
    for (int i = 0; i < 200; ++i)
    {
        const auto params = random_actor(wc, gen, 3.0);
        Rng rng(gen());
        const auto t = rollout(params, w, QuestionId(i % w.questions().size()), 4, rng);
        const auto& q = w.question(t.question_id());
        auto s = ActorState::initial(q);
        for (const auto& step: t.steps())
        {
            if (step.is_actor())
            {
                const auto d = action_distribution(params, w, q, s, 4);
                double sum = 0.0;
                for (double p: d.probabilities)
                {
                    CHECK(p > 0.0);
                    sum += p;
                }
                CHECK(std::abs(sum - 1.0) < 1e-12);
            }
            s.apply(q, step);
        }
    }
}

TEST_CASE("rollouts respect the turn budget")
{
    WorldConfig wc;
    wc.seed = 3;
    const auto w = generate_world(wc);
    std::mt19937_64 gen(5);
    for (int i = 0; i < 500; ++i)
    {
        const auto params = random_actor(wc, gen, 2.0);
        Rng rng(gen());
        const auto t = rollout(params, w, 0, 4, rng);
        CHECK(t.turn_count() <= 4);
        CHECK(t.budget_used() <= 4);
        CHECK_NOTHROW(t.validate(4));
    }
    Rng rng(1);
    CHECK_THROWS_AS(rollout(ActorParams::zeros(wc), w, 0, 0, rng), PreconditionError);
}

TEST_CASE("an answer-tilted policy answers immediately")
{
    const auto w = two_hop_world();
    auto params = ActorParams::zeros(w.config());
    params.weights[actor_feature::answer_bias] = 100.0;
    Rng rng(9);
    const auto t = rollout(params, w, 0, 4, rng);
    REQUIRE(t.steps().size() == 1);
    CHECK(t.steps()[0].kind() == StepKind::Answer);
    CHECK(t.turn_count() == 0);
}

TEST_CASE("recorded step logprobs add up to the trajectory logprob")
{
    WorldConfig wc;
    wc.seed = 12;
    const auto w = generate_world(wc);
    std::mt19937_64 gen(6);
    for (int i = 0; i < 200; ++i)
    {
        const auto params = random_actor(wc, gen);
        Rng rng(gen());
        const auto t = rollout(params, w, 0, 4, rng);
        CHECK(logprob(params, w, t, 4) == t.total_logprob());
    }
}

TEST_CASE("an illegal action cannot be scored")
{
    const auto w = two_hop_world();
    // entity 2 is unknown at the start
    const Trajectory t(0, { Step::answer(2, -1.0) });
    CHECK_THROWS_AS(logprob(ActorParams::zeros(w.config()), w, t, 4), EvaluationError);
}

TEST_CASE("enumerated trajectory probabilities sum to one")
{
    for (std::uint64_t seed = 0; seed < 10; ++seed)
    {
        const auto f = random_fixture(seed);
        const auto space = enumerate(f.actor, f.world, 0, f.refine.budget);
        double sum = 0.0;
        for (const auto& t: space.trajectories)
            sum += std::exp(logprob(f.actor, f.world, t, f.refine.budget));
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("probabilities factor at every split point")
{
    const auto f = random_fixture(3);
    const auto space = enumerate(f.actor, f.world, 0, f.refine.budget);
    for (std::size_t y = 0; y < space.size(); ++y)
    {
        const auto& t = space.trajectories[y];
        const double whole = logprob(f.actor, f.world, t, f.refine.budget);
        for (std::size_t k = 0; k <= t.actor_step_count(); ++k)
        {
            const auto prefix = take_prefix(t, k).trajectory;
            const double head = logprob(f.actor, f.world, prefix, f.refine.budget);
            double tail = 0.0;
            for (auto i = prefix.steps().size(); i < t.steps().size(); ++i)
                if (t.steps()[i].actor_logprob)
                    tail += *t.steps()[i].actor_logprob;
            CHECK(std::abs(whole - (head + tail)) < 1e-12);
            CHECK(std::abs(std::exp(head) - space.nodes[space.path[y][k]].probability) < 1e-12);
        }
    }
}

namespace
{

// Every enumerated trajectory with expected count >= 5 must lie within
// three standard errors of its empirical frequency.
} // namespace

TEST_CASE("rollout frequencies match the enumerated law")
{
    const auto w = two_hop_world(0.5, 2);
    std::mt19937_64 gen(31);
    const auto params = random_actor(w.config(), gen, 0.7);
    const auto space = enumerate(params, w, 0, 2);
    std::vector<std::size_t> hits(space.size(), 0);
    const std::size_t n = 10000;
    Rng rng(77);
    for (std::size_t i = 0; i < n; ++i)
    {
        const auto y = space.find(rollout(params, w, 0, 2, rng));
        REQUIRE(y < space.size());
        ++hits[y];
    }
    check_frequencies(space.probability, hits, n);
}

TEST_CASE("regeneration")
{
    const auto w = two_hop_world(0.5, 2);
    std::mt19937_64 gen(32);
    const auto params = random_actor(w.config(), gen, 0.7);

    SUBCASE("from the empty prefix it is a rollout")
    {
        for (std::uint64_t s = 0; s < 50; ++s)
        {
            Rng a(s);
            Rng b(s);
            CHECK(regenerate(params, w, Prefix { Trajectory(0), 0 }, 3, a) == rollout(params, w, 0, 3, b));
        }
    }

    SUBCASE("a prefix that spent the budget gets no more searches")
    {
        const auto prefix = play(w, 0, { Action::think(0), Action::search({ 0, 0 }) });
        Rng rng(3);
        for (int i = 0; i < 100; ++i)
        {
            const auto t = regenerate(params, w, take_prefix(prefix, 2), 2, rng);
            CHECK(t.turn_count() == 1);
            CHECK(take_prefix(t, 2).trajectory == prefix);
        }
    }

    SUBCASE("a terminal prefix is refused")
    {
        const auto done = play(w, 0, { Action::answer(0) });
        Rng rng(3);
        CHECK_THROWS_AS(regenerate(params, w, take_prefix(done, 1), 4, rng), PreconditionError);
    }

    SUBCASE("frequencies from a fixed prefix match the conditional law")
    {
        const std::size_t budget = 3;
        const auto space = enumerate(params, w, 0, budget);
        const auto prefix = play(w, 0, { Action::search({ 0, 0 }) });
        // locate the node of the prefix through any trajectory that starts with it
        std::size_t node = space.nodes.size();
        for (std::size_t y = 0; y < space.size() && node == space.nodes.size(); ++y)
            if (space.length(y) >= 1 && space.trajectories[y].steps().front().payload == prefix.steps().front().payload)
                node = space.path[y][1];
        REQUIRE(node < space.nodes.size());
        const auto& nd = space.nodes[node];

        std::vector<double> expected(space.size(), 0.0);
        for (auto y = nd.leaf_begin; y < nd.leaf_end; ++y)
            expected[y] = space.probability[y] / nd.probability;
        std::vector<std::size_t> hits(space.size(), 0);
        const std::size_t n = 10000;
        Rng rng(78);
        for (std::size_t i = 0; i < n; ++i)
        {
            const auto y = space.find(regenerate(params, w, take_prefix(prefix, 1), budget, rng));
            REQUIRE(y >= nd.leaf_begin);
            REQUIRE(y < nd.leaf_end);
            ++hits[y];
        }
        check_frequencies(expected, hits, n);
    }
}

TEST_CASE("parameter checkpoints round-trip")
{
    std::mt19937_64 gen(1);
    WorldConfig wc;
    const auto p = random_actor(wc, gen);
    std::stringstream buf;
    save_params(p.weights, buf);
    CHECK(load_params(buf) == p.weights);
    std::stringstream bad("dim 3\n1\n2\n");
    CHECK_THROWS_AS(load_params(bad), ParseError);
}
