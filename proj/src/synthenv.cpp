// SPDX-License-Identifier: Apache-2.0
#include <searchlab/errors.hpp>
#include <searchlab/rng.hpp>
#include <searchlab/synthenv.hpp>
#include <searchlab/textio.hpp>

#include <algorithm>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <string>

namespace searchlab
{

void WorldConfig::validate() const
{
    if (hop_count < 1)
        throw ConfigError("hop_count must be >= 1");
    if (num_relations < 1)
        throw ConfigError("num_relations must be >= 1");
    if (top_k < 1)
        throw ConfigError("top_k must be >= 1");
    if (num_entities < hop_count + 1)
        throw ConfigError("num_entities must be >= hop_count + 1 (got " + std::to_string(num_entities)
                          + " entities for " + std::to_string(hop_count) + " hops)");
    if (!(distractor_rate >= 0.0 && distractor_rate <= 1.0))
        throw ConfigError("distractor_rate must lie in [0, 1]");
    if (num_questions > num_entities / (hop_count + 1))
        throw ConfigError("num_questions needs disjoint gold chains: at most "
                          + std::to_string(num_entities / (hop_count + 1)));
}

std::uint32_t WorldConfig::question_count() const
{
    if (num_questions != 0)
        return num_questions;
    return std::max<std::uint32_t>(1, std::min<std::uint32_t>(8, num_entities / (hop_count + 1)));
}

KnowledgeWorld::KnowledgeWorld(WorldConfig config, std::vector<Triple> facts, std::vector<Question> questions):
    _config(config), _facts(std::move(facts)), _questions(std::move(questions))
{
    _config.validate();
    _index.assign(std::size_t(_config.num_entities) * _config.num_relations, -1);
    for (std::size_t i = 0; i < _facts.size(); ++i)
    {
        const auto& f = _facts[i];
        if (!has_entity(f.subject) || !has_entity(f.object) || !has_relation(f.relation))
            throw ConfigError("fact references an unknown entity or relation");
        auto& slot = _index[std::size_t(f.subject) * _config.num_relations + f.relation];
        if (slot >= 0)
            throw ConfigError("facts must be functional in (subject, relation)");
        slot = static_cast<std::int64_t>(i);
    }
    for (std::size_t q = 0; q < _questions.size(); ++q)
    {
        if (_questions[q].id != q)
            throw ConfigError("question ids must be dense and ordered");
        std::vector<std::size_t> off;
        for (std::size_t i = 0; i < _facts.size(); ++i)
            if (!on_gold_chain(QuestionId(q), _facts[i]))
                off.push_back(i);
        _off_chain.push_back(std::move(off));
    }
}

const Question& KnowledgeWorld::question(QuestionId id) const
{
    if (id >= _questions.size())
        throw std::out_of_range("unknown question id " + std::to_string(id));
    return _questions[id];
}

std::optional<std::size_t> KnowledgeWorld::find_fact(EntityId subject, RelationId relation) const
{
    if (!has_entity(subject) || !has_relation(relation))
        return std::nullopt;
    const auto slot = _index[std::size_t(subject) * _config.num_relations + relation];
    if (slot < 0)
        return std::nullopt;
    return static_cast<std::size_t>(slot);
}

bool KnowledgeWorld::on_gold_chain(QuestionId id, const Triple& t) const
{
    const auto& chain = question(id).gold_chain;
    return std::find(chain.begin(), chain.end(), t) != chain.end();
}

QueryResult KnowledgeWorld::search(QuestionId id, Query query, std::uint32_t call_ordinal) const
{
    QueryResult result;
    result.chunks.reserve(_config.top_k);
    if (!has_entity(query.entity) || !has_relation(query.relation))
    {
        result.chunks.resize(_config.top_k);
        return result;
    }

    auto make_chunk = [&](std::size_t fact) {
        return Chunk { .id = fact + 1, .content = _facts[fact], .on_gold_chain = on_gold_chain(id, _facts[fact]) };
    };

    if (auto hit = find_fact(query.entity, query.relation))
        result.chunks.push_back(make_chunk(*hit));

    Rng rng(mix_seed({ _config.seed, 0x5EA4C4ULL, id, query.entity, query.relation, call_ordinal }));
    const auto& pool = _off_chain.at(id);
    while (result.chunks.size() < _config.top_k)
    {
        Chunk filler {};
        if (uniform01(rng) < _config.distractor_rate && !pool.empty())
        {
            for (int attempt = 0; attempt < 8; ++attempt)
            {
                const auto fact = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
                const auto candidate = make_chunk(fact);
                if (std::find(result.chunks.begin(), result.chunks.end(), candidate) == result.chunks.end())
                {
                    filler = candidate;
                    break;
                }
            }
        }
        result.chunks.push_back(filler);
    }
    return result;
}

namespace
{

// Number of distinct fact paths from `from` to `to`, saturated at 2.
// `order` lists entities so that every fact points forward in it.
int count_paths(const std::vector<std::vector<EntityId>>& successors, const std::vector<EntityId>& order,
                const std::vector<std::size_t>& position, EntityId from, EntityId to)
{
    std::vector<int> paths(successors.size(), 0);
    paths[from] = 1;
    for (auto pos = position[from]; pos < order.size(); ++pos)
    {
        const auto e = order[pos];
        if (paths[e] == 0)
            continue;
        for (auto next: successors[e])
            paths[next] = std::min(2, paths[next] + paths[e]);
    }
    return paths[to];
}

} // namespace

KnowledgeWorld generate_world(const WorldConfig& config)
{
    config.validate();
    Rng rng(mix_seed({ config.seed, 0x3011DULL }));
    const auto n = config.num_entities;
    const auto hops = config.hop_count;
    auto pick = [&](std::uint64_t lo, std::uint64_t hi) {
        return std::uniform_int_distribution<std::uint64_t>(lo, hi)(rng);
    };

    std::vector<EntityId> order(n);
    std::iota(order.begin(), order.end(), EntityId { 0 });
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> position(n);
    for (std::size_t i = 0; i < n; ++i)
        position[order[i]] = i;

    std::vector<Triple> facts;
    std::vector<Question> questions;
    std::set<std::pair<EntityId, RelationId>> used;
    std::vector<std::vector<EntityId>> successors(n);

    // gold chains occupy disjoint consecutive blocks of the topological order
    const auto q_count = config.question_count();
    for (QuestionId q = 0; q < q_count; ++q)
    {
        Question question;
        question.id = q;
        const auto base = std::size_t(q) * (hops + 1);
        for (std::uint32_t h = 0; h < hops; ++h)
        {
            const auto rel = static_cast<RelationId>(pick(0, config.num_relations - 1));
            const Triple t { order[base + h], rel, order[base + h + 1] };
            question.relations.push_back(rel);
            question.gold_chain.push_back(t);
            facts.push_back(t);
            used.emplace(t.subject, t.relation);
            successors[t.subject].push_back(t.object);
        }
        question.start = order[base];
        question.answer = order[base + hops];
        questions.push_back(std::move(question));
    }

    // off-chain facts, rejected when they would open a second route to an answer
    const auto attempts = std::size_t(n) * config.num_relations;
    for (std::size_t a = 0; a < attempts && n >= 2; ++a)
    {
        const auto i = pick(0, n - 2);
        const auto j = pick(i + 1, n - 1);
        const auto rel = static_cast<RelationId>(pick(0, config.num_relations - 1));
        const Triple t { order[i], rel, order[j] };
        if (used.contains({ t.subject, t.relation }))
            continue;
        successors[t.subject].push_back(t.object);
        const bool ambiguous = std::any_of(questions.begin(), questions.end(), [&](const Question& q) {
            return count_paths(successors, order, position, q.start, q.answer) != 1;
        });
        if (ambiguous)
        {
            successors[t.subject].pop_back();
            continue;
        }
        used.emplace(t.subject, t.relation);
        facts.push_back(t);
    }

    return KnowledgeWorld(config, std::move(facts), std::move(questions));
}

std::vector<int> chunk_utility(const KnowledgeWorld& world, QuestionId id, std::span<const QueryResult> history)
{
    (void) world.question(id);
    std::set<Triple> seen;
    std::vector<int> utility;
    utility.reserve(history.size());
    for (const auto& result: history)
    {
        int useful = 0;
        for (const auto& chunk: result.chunks)
            if (chunk.content && chunk.on_gold_chain && !seen.contains(*chunk.content))
                useful = 1;
        for (const auto& chunk: result.chunks)
            if (chunk.content)
                seen.insert(*chunk.content);
        utility.push_back(useful);
    }
    return utility;
}

void save_world(const KnowledgeWorld& world, std::ostream& out)
{
    const auto& c = world.config();
    out << "world entities=" << c.num_entities << " relations=" << c.num_relations << " hops=" << c.hop_count
        << " top_k=" << c.top_k << " distractor_rate=" << textio::format_double(c.distractor_rate)
        << " seed=" << c.seed << " questions=" << c.num_questions << '\n';
    for (const auto& f: world.facts())
        out << "fact " << f.subject << ' ' << f.relation << ' ' << f.object << '\n';
    for (const auto& q: world.questions())
    {
        out << "question " << q.id << ' ' << q.start << ' ' << q.answer;
        for (auto r: q.relations)
            out << ' ' << r;
        out << '\n';
    }
}

KnowledgeWorld load_world(std::istream& in)
{
    std::string line;
    std::size_t line_no = 0;
    std::optional<WorldConfig> config;
    std::vector<Triple> facts;
    std::vector<Question> questions;

    auto number = [&](std::string_view tok) {
        auto v = textio::parse_uint(tok);
        if (!v)
            throw ParseError(line_no, "expected an unsigned integer, got '" + std::string(tok) + "'");
        return *v;
    };

    while (std::getline(in, line))
    {
        ++line_no;
        const auto tokens = textio::split_ws(line);
        if (tokens.empty() || tokens[0].starts_with('#'))
            continue;
        if (tokens[0] == "world")
        {
            WorldConfig c;
            for (std::size_t i = 1; i < tokens.size(); ++i)
            {
                auto kv = textio::split_key_value(tokens[i]);
                if (!kv)
                    throw ParseError(line_no, "expected key=value in world header");
                const auto [key, value] = *kv;
                if (key == "entities")
                    c.num_entities = std::uint32_t(number(value));
                else if (key == "relations")
                    c.num_relations = std::uint32_t(number(value));
                else if (key == "hops")
                    c.hop_count = std::uint32_t(number(value));
                else if (key == "top_k")
                    c.top_k = std::uint32_t(number(value));
                else if (key == "seed")
                    c.seed = number(value);
                else if (key == "questions")
                    c.num_questions = std::uint32_t(number(value));
                else if (key == "distractor_rate")
                {
                    auto d = textio::parse_double(value);
                    if (!d)
                        throw ParseError(line_no, "bad distractor_rate");
                    c.distractor_rate = *d;
                }
                else
                    throw ParseError(line_no, "unknown world key '" + std::string(key) + "'");
            }
            config = c;
        }
        else if (tokens[0] == "fact")
        {
            if (tokens.size() != 4)
                throw ParseError(line_no, "fact lines carry exactly one triple");
            facts.push_back(Triple { EntityId(number(tokens[1])), RelationId(number(tokens[2])),
                                     EntityId(number(tokens[3])) });
        }
        else if (tokens[0] == "question")
        {
            if (tokens.size() < 5)
                throw ParseError(line_no, "question lines need id, start, answer and a relation path");
            Question q;
            q.id = QuestionId(number(tokens[1]));
            q.start = EntityId(number(tokens[2]));
            q.answer = EntityId(number(tokens[3]));
            for (std::size_t i = 4; i < tokens.size(); ++i)
                q.relations.push_back(RelationId(number(tokens[i])));
            questions.push_back(std::move(q));
        }
        else
            throw ParseError(line_no, "unknown record '" + std::string(tokens[0]) + "'");
    }
    if (!config)
        throw ParseError(line_no, "missing world header");

    // rebuild gold chains by walking each relation path
    std::map<std::pair<EntityId, RelationId>, EntityId> lookup;
    for (const auto& f: facts)
        lookup[{ f.subject, f.relation }] = f.object;
    for (auto& q: questions)
    {
        auto e = q.start;
        for (auto r: q.relations)
        {
            auto it = lookup.find({ e, r });
            if (it == lookup.end())
                throw ParseError(line_no, "question " + std::to_string(q.id) + " has a broken relation path");
            q.gold_chain.push_back(Triple { e, r, it->second });
            e = it->second;
        }
        if (e != q.answer)
            throw ParseError(line_no, "question " + std::to_string(q.id) + " path does not reach its answer");
    }
    return KnowledgeWorld(*config, std::move(facts), std::move(questions));
}

} // namespace searchlab
