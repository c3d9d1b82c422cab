// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

#include <searchlab/errors.hpp>

#include <deque>
#include <sstream>

using namespace searchlab;
using namespace searchlab::testing;

TEST_CASE("identical configs give identical worlds")
{
    WorldConfig wc;
    wc.seed = 7;
    CHECK(generate_world(wc) == generate_world(wc));
    auto other = wc;
    other.seed = 8;
    CHECK_FALSE(generate_world(wc) == generate_world(other));
}

TEST_CASE("minimal world holds a single fact")
{
    WorldConfig wc;
    wc.hop_count = 1;
    wc.num_entities = 2;
    wc.num_relations = 1;
    const auto w = generate_world(wc);
    REQUIRE(w.questions().size() == 1);
    CHECK(w.facts().size() == 1);
    CHECK(w.questions()[0].gold_chain.size() == 1);
    CHECK(w.questions()[0].gold_chain[0] == w.facts()[0]);
}

TEST_CASE("invalid configs are rejected")
{
    WorldConfig wc;
    wc.hop_count = 3;
    wc.num_entities = 3;
    CHECK_THROWS_AS(generate_world(wc), ConfigError);
    wc = {};
    wc.hop_count = 0;
    CHECK_THROWS_AS(wc.validate(), ConfigError);
    wc = {};
    wc.top_k = 0;
    CHECK_THROWS_AS(wc.validate(), ConfigError);
    wc = {};
    wc.num_relations = 0;
    CHECK_THROWS_AS(wc.validate(), ConfigError);
    wc = {};
    wc.distractor_rate = 1.5;
    CHECK_THROWS_AS(wc.validate(), ConfigError);
}

TEST_CASE("question count follows the derived default")
{
    WorldConfig wc;
    CHECK(wc.question_count() == 8);
    wc.num_entities = 7;
    wc.hop_count = 2;
    CHECK(wc.question_count() == 2);
    wc.num_entities = 3;
    CHECK(wc.question_count() == 1);
    wc.num_questions = 5;
    CHECK(wc.question_count() == 5);
}

TEST_CASE("gold chains are connected and the only route to the answer")
{
    for (std::uint64_t seed: { 42ULL, 1ULL, 2ULL, 3ULL })
    {
        WorldConfig wc;
        wc.hop_count = 2;
        wc.num_entities = 50;
        wc.seed = seed;
        const auto w = generate_world(wc);
        const std::set<Triple> facts(w.facts().begin(), w.facts().end());
        for (const auto& q: w.questions())
        {
            REQUIRE(q.gold_chain.size() == wc.hop_count);
            REQUIRE(q.relations.size() == wc.hop_count);
            EntityId at = q.start;
            for (std::size_t i = 0; i < q.gold_chain.size(); ++i)
            {
                const auto& t = q.gold_chain[i];
                CHECK(facts.count(t) == 1);
                CHECK(t.subject == at);
                CHECK(t.relation == q.relations[i]);
                at = t.object;
            }
            CHECK(at == q.answer);
            CHECK(count_fact_paths(w.facts(), q.start, q.answer) == 1);
        }
    }
}

TEST_CASE("facts are functional in subject and relation")
{
    WorldConfig wc;
    wc.seed = 5;
    const auto w = generate_world(wc);
    std::set<std::pair<EntityId, RelationId>> keys;
    for (const auto& f: w.facts())
        CHECK(keys.emplace(f.subject, f.relation).second);
    CHECK_THROWS_AS(KnowledgeWorld(wc, { { 0, 0, 1 }, { 0, 0, 2 } }, {}), ConfigError);
}

TEST_CASE("search results")
{
    const auto w = two_hop_world(0.5);

    SUBCASE("a gold edge yields exactly one gold chunk")
    {
        const auto r = w.search(0, { 0, 0 }, 0);
        REQUIRE(r.chunks.size() == 3);
        int gold = 0;
        for (const auto& c: r.chunks)
            gold += c.on_gold_chain ? 1 : 0;
        CHECK(gold == 1);
        CHECK(r.chunks[0].content == Triple { 0, 0, 1 });
    }

    SUBCASE("a missing edge yields no gold chunk")
    {
        const auto r = w.search(0, { 2, 0 }, 0);
        REQUIRE(r.chunks.size() == 3);
        for (const auto& c: r.chunks)
            CHECK_FALSE(c.on_gold_chain);
    }

    SUBCASE("unknown vocabulary yields empty chunks")
    {
        for (const auto& r: { w.search(0, { 99, 0 }, 0), w.search(0, { 0, 9 }, 0) })
        {
            REQUIRE(r.chunks.size() == 3);
            for (const auto& c: r.chunks)
            {
                CHECK(c.id == 0);
                CHECK_FALSE(c.content.has_value());
            }
        }
    }
}

TEST_CASE("gold flags and result length hold across random searches")
{
    WorldConfig wc;
    wc.seed = 9;
    wc.distractor_rate = 0.8;
    const auto w = generate_world(wc);
    std::mt19937_64 rng(3);
    for (int i = 0; i < 2000; ++i)
    {
        const auto q = QuestionId(rng() % w.questions().size());
        const Query query { EntityId(rng() % wc.num_entities), RelationId(rng() % wc.num_relations) };
        const auto r = w.search(q, query, std::uint32_t(rng() % 4));
        REQUIRE(r.chunks.size() == wc.top_k);
        for (const auto& c: r.chunks)
        {
            if (!c.content)
            {
                CHECK_FALSE(c.on_gold_chain);
                continue;
            }
            const auto& chain = w.question(q).gold_chain;
            CHECK(c.on_gold_chain == (std::find(chain.begin(), chain.end(), *c.content) != chain.end()));
        }
    }
}

TEST_CASE("repeated call sequences replay identical chunk ids")
{
    WorldConfig wc;
    wc.seed = 21;
    const auto w = generate_world(wc);
    auto run = [&] {
        std::vector<ChunkId> ids;
        std::mt19937_64 rng(4);
        for (std::uint32_t i = 0; i < 200; ++i)
        {
            const Query query { EntityId(rng() % wc.num_entities), RelationId(rng() % wc.num_relations) };
            for (const auto& c: w.search(QuestionId(i % w.questions().size()), query, i % 4).chunks)
                ids.push_back(c.id);
        }
        return ids;
    };
    CHECK(run() == run());
}

TEST_CASE("chunk utility follows the three written criteria")
{
    const auto w = two_hop_world(0.0);
    const auto gold1 = w.search(0, { 0, 0 }, 0);
    const auto gold2 = w.search(0, { 1, 1 }, 1);
    const auto distractor = w.search(0, { 3, 0 }, 0);

    CHECK(chunk_utility(w, 0, std::vector { gold1 }) == std::vector { 1 });
    CHECK(chunk_utility(w, 0, std::vector { gold1, gold1 }) == std::vector { 1, 0 });
    CHECK(chunk_utility(w, 0, std::vector { distractor, gold1, gold2 }) == std::vector { 0, 1, 1 });
    CHECK(chunk_utility(w, 0, std::vector<QueryResult> {}).empty());
}

TEST_CASE("utility bits are sound and bounded by the hop count")
{
    WorldConfig wc;
    wc.seed = 17;
    wc.num_entities = 12;
    wc.distractor_rate = 0.7;
    const auto w = generate_world(wc);
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 500; ++trial)
    {
        const auto q = QuestionId(rng() % w.questions().size());
        const auto& question = w.question(q);
        std::vector<QueryResult> history;
        const auto n = 1 + rng() % 6;
        for (std::uint32_t i = 0; i < n; ++i)
        {
            Query query { EntityId(rng() % wc.num_entities), RelationId(rng() % wc.num_relations) };
            if (rng() % 2 == 0)
            {
                const auto& t = question.gold_chain[rng() % question.gold_chain.size()];
                query = { t.subject, t.relation };
            }
            history.push_back(w.search(q, query, i));
        }
        const auto u = chunk_utility(w, q, history);
        REQUIRE(u.size() == history.size());
        int total = 0;
        for (std::size_t i = 0; i < u.size(); ++i)
        {
            total += u[i];
            if (u[i] == 1)
            {
                bool hit = false;
                for (const auto& c: history[i].chunks)
                    hit = hit || c.on_gold_chain;
                CHECK(hit);
            }
        }
        CHECK(total <= int(wc.hop_count));
    }
}

namespace
{

// Breadth-first search over query sequences: a state is the set of entities
// known so far, and each search may reveal new ones.
bool solvable_in(const KnowledgeWorld& w, const Question& q, std::size_t max_queries)
{
    struct Node
    {
        std::set<EntityId> known;
        std::size_t depth;
    };
    std::deque<Node> frontier { { { q.start }, 0 } };
    std::set<std::set<EntityId>> seen;
    while (!frontier.empty())
    {
        auto node = frontier.front();
        frontier.pop_front();
        if (node.known.count(q.answer))
            return true;
        if (node.depth == max_queries || !seen.insert(node.known).second)
            continue;
        for (auto e: node.known)
            for (RelationId r = 0; r < w.config().num_relations; ++r)
            {
                auto next = node.known;
                for (const auto& c: w.search(q.id, { e, r }, std::uint32_t(node.depth)).chunks)
                    if (c.content)
                    {
                        next.insert(c.content->subject);
                        next.insert(c.content->object);
                    }
                frontier.push_back({ std::move(next), node.depth + 1 });
            }
    }
    return false;
}

} // namespace

TEST_CASE("every question is solvable within hop_count searches")
{
    for (std::uint64_t seed = 0; seed < 5; ++seed)
    {
        WorldConfig wc;
        wc.seed = seed;
        wc.num_entities = 20;
        const auto w = generate_world(wc);
        for (const auto& q: w.questions())
            CHECK(solvable_in(w, q, wc.hop_count));
    }
}

TEST_CASE("world dump round-trips")
{
    WorldConfig wc;
    wc.seed = 13;
    wc.distractor_rate = 0.25;
    const auto w = generate_world(wc);
    std::stringstream buf;
    save_world(w, buf);
    CHECK(load_world(buf) == w);

    std::stringstream bad("world entities=5 relations=1 hops=1 top_k=1 distractor_rate=0 seed=0 questions=0\n"
                          "fact 0 zero 1\n");
    CHECK_THROWS_AS(load_world(bad), ParseError);
}
