// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

#include <searchlab/oracle.hpp>
#include <searchlab/reward.hpp>

using namespace searchlab;
using namespace searchlab::testing;

namespace
{

const Action gold1 = Action::search({ 0, 0 });
const Action gold2 = Action::search({ 1, 1 });
const Action miss = Action::search({ 0, 1 });

} // namespace

TEST_CASE("outcome reward")
{
    const auto w = two_hop_world();
    CHECK(outcome_reward(play(w, 0, { gold1, gold2, Action::answer(2) }), w) == 1);
    CHECK(outcome_reward(play(w, 0, { gold1, gold2 }), w) == 0);
    // the chain midpoint is a wrong answer
    CHECK(outcome_reward(play(w, 0, { gold1, Action::answer(1) }), w) == 0);
}

TEST_CASE("process reward")
{
    const auto w = two_hop_world();
    CHECK(process_reward(play(w, 0, { gold1, gold1, gold2 }), w) == doctest::Approx(2.0 / 3.0));
    CHECK(process_reward(play(w, 0, { Action::answer(0) }), w) == 0.0);
    CHECK(process_reward(play(w, 0, { gold1, gold1, gold1 }), w) == doctest::Approx(1.0 / 3.0));
    CHECK(process_reward(play(w, 0, { miss }), w) == 0.0);
}

TEST_CASE("hybrid reward")
{
    const auto w = two_hop_world();

    SUBCASE("outcome 1, process 0.5")
    {
        const auto r = hybrid_reward(play(w, 0, { gold1, gold1, gold2, miss, Action::answer(2) }), w);
        CHECK(r.outcome == 1);
        CHECK(r.process == 0.5);
        CHECK(r.total == 1.5);
        CHECK(r.num_queries == 4);
        CHECK(r.utilities == std::vector { 1, 0, 1, 0 });
    }
    SUBCASE("outcome 0, process 1")
    {
        const auto r = hybrid_reward(play(w, 0, { gold1, gold2, Action::answer(1) }), w);
        CHECK(r.process == 1.0);
        CHECK(r.total == 0.0);
    }
    SUBCASE("outcome 1, process 0")
    {
        // answering the start entity is never right, so use a world where a
        // search-free answer can be
        const Triple a { 0, 0, 1 };
        WorldConfig wc;
        wc.num_entities = 2;
        wc.num_relations = 1;
        wc.hop_count = 1;
        wc.num_questions = 1;
        const KnowledgeWorld one(wc, { a }, { Question { 0, 0, 1, { 0 }, { a } } });
        auto t = play(one, 0, { Action::search({ 0, 0 }) });
        auto r = hybrid_reward(t, one);
        CHECK(r.process == 1.0);
        t = play(one, 0, { Action::search({ 1, 0 }), Action::search({ 0, 0 }), Action::answer(1) });
        r = hybrid_reward(t, one);
        CHECK(r.total == 1.5);
        t = Trajectory(0, { Step::answer(1, 0.0) });
        r = hybrid_reward(t, one);
        CHECK(r.outcome == 1);
        CHECK(r.process == 0.0);
        CHECK(r.total == 1.0);
    }
}

TEST_CASE("one more useful query raises the total by 1/M")
{
    const auto w = two_hop_world();
    const auto low = hybrid_reward(play(w, 0, { gold1, miss, gold2, Action::answer(2) }), w);
    const auto high = hybrid_reward(play(w, 0, { gold1, gold2, miss, Action::answer(2) }), w);
    REQUIRE(low.num_queries == high.num_queries);
    // same searches, different order: both have two useful queries
    CHECK(low.total == high.total);
    const auto fewer = hybrid_reward(play(w, 0, { gold1, miss, miss, gold2, Action::answer(2) }), w);
    const auto more = hybrid_reward(play(w, 0, { gold1, miss, gold1, gold2, Action::answer(2) }), w);
    CHECK(more.total - fewer.total == doctest::Approx(0.0));
    const auto flipped = hybrid_reward(play(w, 0, { gold1, miss, gold2, gold2, Action::answer(2) }), w);
    const auto base = hybrid_reward(play(w, 0, { gold1, miss, miss, gold2, Action::answer(2) }), w);
    CHECK(flipped.total == base.total);
    const auto three = hybrid_reward(play(w, 0, { gold1, miss, gold2, Action::answer(2) }), w);
    const auto three_less = hybrid_reward(play(w, 0, { gold1, miss, miss, Action::answer(2) }), w);
    (void)three_less;
    CHECK(three.total == doctest::Approx(1.0 + 2.0 / 3.0));
}

TEST_CASE("reward contract over enumerated spaces")
{
    for (std::uint64_t seed = 0; seed < 20; ++seed)
    {
        const auto f = random_fixture(seed);
        const auto space = enumerate(f.actor, f.world, 0, f.refine.budget);
        for (const auto& t: space.trajectories)
        {
            const auto r = hybrid_reward(t, f.world);
            CHECK(r.total == double(r.outcome) * (1.0 + r.process));
            CHECK((r.total == 0.0 || (r.total >= 1.0 && r.total <= 2.0)));
            if (r.num_queries > 0)
            {
                int sum = 0;
                for (int u: r.utilities)
                    sum += u;
                CHECK(r.process == double(sum) / double(r.num_queries));
            }
        }
    }
}

TEST_CASE("csv row")
{
    const auto w = two_hop_world();
    const auto r = hybrid_reward(play(w, 0, { gold1, gold1, gold2, miss, Action::answer(2) }), w);
    CHECK(reward_csv_header() == "outcome,process,total,M");
    CHECK(to_csv_row(r) == "1,0.5,1.5,4");
}
