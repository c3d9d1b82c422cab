// SPDX-License-Identifier: Apache-2.0
#pragma once

// Seeded multi-hop question worlds and the mock search engine over them.
//
// A world is a functional DAG of (subject, relation, object) facts: every
// (subject, relation) pair has at most one object. Each question names a
// start entity and a relation path; following that path through the facts
// reaches the answer, and no other path in the fact graph connects the two.

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace searchlab
{

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;
using QuestionId = std::uint32_t;
using ChunkId = std::uint64_t;

struct Triple
{
    EntityId subject = 0;
    RelationId relation = 0;
    EntityId object = 0;

    auto operator<=>(const Triple&) const = default;
};

struct Query
{
    EntityId entity = 0;
    RelationId relation = 0;

    auto operator<=>(const Query&) const = default;
};

struct WorldConfig
{
    std::uint32_t num_entities = 50;
    std::uint32_t num_relations = 2;
    std::uint32_t hop_count = 2;
    std::uint32_t top_k = 3;
    double distractor_rate = 0.5;
    std::uint64_t seed = 0;
    /// 0 selects the derived default, see `question_count()`.
    std::uint32_t num_questions = 0;

    /// Throws ConfigError when the invariants do not hold.
    void validate() const;

    /// min(8, num_entities / (hop_count + 1)), at least 1, unless overridden.
    [[nodiscard]] std::uint32_t question_count() const;

    bool operator==(const WorldConfig&) const = default;
};

struct Question
{
    QuestionId id = 0;
    EntityId start = 0;
    EntityId answer = 0;
    std::vector<RelationId> relations;
    std::vector<Triple> gold_chain;

    bool operator==(const Question&) const = default;
};

struct Chunk
{
    /// 0 for an empty chunk, otherwise 1 + the fact index.
    ChunkId id = 0;
    std::optional<Triple> content;
    bool on_gold_chain = false;

    bool operator==(const Chunk&) const = default;
};

struct QueryResult
{
    std::vector<Chunk> chunks;

    bool operator==(const QueryResult&) const = default;
};

class KnowledgeWorld
{
  public:
    KnowledgeWorld(WorldConfig config, std::vector<Triple> facts, std::vector<Question> questions);

    [[nodiscard]] const WorldConfig& config() const noexcept { return _config; }
    [[nodiscard]] const std::vector<Triple>& facts() const noexcept { return _facts; }
    [[nodiscard]] const std::vector<Question>& questions() const noexcept { return _questions; }
    [[nodiscard]] const Question& question(QuestionId id) const;

    [[nodiscard]] bool has_entity(EntityId e) const noexcept { return e < _config.num_entities; }
    [[nodiscard]] bool has_relation(RelationId r) const noexcept { return r < _config.num_relations; }

    /// Index of the fact (subject, relation, ·), if any.
    [[nodiscard]] std::optional<std::size_t> find_fact(EntityId subject, RelationId relation) const;

    [[nodiscard]] bool on_gold_chain(QuestionId id, const Triple& t) const;

    /// The mock search engine. Deterministic in (world seed, question, query,
    /// call ordinal), where the ordinal counts searches within one trajectory.
    [[nodiscard]] QueryResult search(QuestionId id, Query query, std::uint32_t call_ordinal) const;

    bool operator==(const KnowledgeWorld& other) const
    {
        return _config == other._config && _facts == other._facts && _questions == other._questions;
    }

  private:
    WorldConfig _config;
    std::vector<Triple> _facts;
    std::vector<Question> _questions;
    // facts indexed by subject * num_relations + relation; -1 when absent
    std::vector<std::int64_t> _index;
    // per question: indices of facts that are not on its gold chain
    std::vector<std::vector<std::size_t>> _off_chain;
};

KnowledgeWorld generate_world(const WorldConfig& config);

/// Per-search utility bits: 1 iff the result holds a gold-chain chunk whose
/// content did not appear in any earlier result of the same history.
std::vector<int> chunk_utility(const KnowledgeWorld& world, QuestionId id,
                               std::span<const QueryResult> history);

/// Line-delimited dump: a `world` header line with the config, then one
/// `fact` line per triple and one `question` line per question.
void save_world(const KnowledgeWorld& world, std::ostream& out);
KnowledgeWorld load_world(std::istream& in);

} // namespace searchlab
