// SPDX-License-Identifier: Apache-2.0
#pragma once

// The base policy: a linear-softmax policy over think / search / answer
// actions, rolled out against the mock search engine under a turn budget.
//
// State summary seen by the features: the entities discovered so far, how
// many hops of the question's relation path the observed facts resolve (the
// "frontier" entity reached that way), and the share of the budget used.

#include <searchlab/linalg.hpp>
#include <searchlab/rng.hpp>
#include <searchlab/synthenv.hpp>
#include <searchlab/trajectory.hpp>

#include <set>
#include <vector>

namespace searchlab
{

enum class ActionKind
{
    Think,
    Search,
    Answer,
};

struct Action
{
    ActionKind kind = ActionKind::Think;
    std::uint32_t token = 0;
    Query query {};
    EntityId entity = 0;

    static Action think(std::uint32_t token) { return { ActionKind::Think, token, {}, 0 }; }
    static Action search(Query q) { return { ActionKind::Search, 0, q, 0 }; }
    static Action answer(EntityId e) { return { ActionKind::Answer, 0, {}, e }; }
    /// Throws std::invalid_argument for information steps.
    static Action from_step(const Step& step);

    [[nodiscard]] Step to_step(double logprob) const;

    bool operator==(const Action&) const = default;
};

/// What the actor knows after a (partial) trajectory.
struct ActorState
{
    std::vector<EntityId> known; // sorted, unique
    std::set<Query> issued;
    std::set<Triple> observed;
    EntityId frontier = 0;
    std::uint32_t progress = 0;
    std::size_t budget_used = 0;
    std::uint32_t searches = 0;
    bool terminal = false;

    static ActorState initial(const Question& q);
    static ActorState replay(const Question& q, std::span<const Step> steps);
    void apply(const Question& q, const Step& step);

    [[nodiscard]] bool on_frontier_edge(const Question& q, Query query) const;
    /// True for answers that match a fully resolved relation path.
    [[nodiscard]] bool resolved_answer(const Question& q, EntityId e) const;
    /// Think steps, off-frontier searches and unresolved answers.
    [[nodiscard]] bool is_flawed(const Question& q, const Action& a) const;
};

namespace actor_feature
{
inline constexpr std::size_t think_bias = 0;
inline constexpr std::size_t search_bias = 1;
inline constexpr std::size_t search_frontier_entity = 2;
inline constexpr std::size_t search_next_relation = 3;
inline constexpr std::size_t search_frontier_edge = 4;
inline constexpr std::size_t search_repeated = 5;
inline constexpr std::size_t search_budget_share = 6;
inline constexpr std::size_t answer_bias = 7;
inline constexpr std::size_t answer_frontier = 8;
inline constexpr std::size_t answer_resolved = 9;
inline constexpr std::size_t answer_budget_share = 10;
inline constexpr std::size_t answer_question_entity = 11;
/// followed by one search-relation indicator per relation
inline constexpr std::size_t relation_base = 12;
} // namespace actor_feature

std::size_t actor_feature_dim(const WorldConfig& config);

struct ActorParams
{
    std::vector<double> weights;

    static ActorParams zeros(const WorldConfig& config) { return { std::vector<double>(actor_feature_dim(config)) }; }

    bool operator==(const ActorParams&) const = default;
};

struct ActionDistribution
{
    std::vector<Action> support;
    std::vector<double> probabilities;
    std::vector<double> log_probabilities;
    FeatureMatrix features;

    /// Index of `a` in the support, or support.size() when illegal.
    [[nodiscard]] std::size_t find(const Action& a) const;
};

/// Legal actions in a fixed order: think, searches (entity-major), answers.
/// Empty once the state is terminal or the budget is spent.
std::vector<Action> legal_actions(const KnowledgeWorld& world, const ActorState& state, std::size_t budget);

std::vector<double> action_features(const KnowledgeWorld& world, const Question& q, const ActorState& state,
                                    const Action& a, std::size_t budget);

ActionDistribution action_distribution(const ActorParams& params, const KnowledgeWorld& world, const Question& q,
                                       const ActorState& state, std::size_t budget);

/// Samples actions until an answer, or until the budget runs out. Searches
/// are answered by the world with a per-trajectory call ordinal.
Trajectory rollout(const ActorParams& params, const KnowledgeWorld& world, QuestionId question, std::size_t budget,
                   Rng& rng);

/// Continues sampling from the end of `prefix`; returns the joined trajectory.
Trajectory regenerate(const ActorParams& params, const KnowledgeWorld& world, const Prefix& prefix,
                      std::size_t budget, Rng& rng);

/// Sum of log pi(a_t | s_t) over the actor steps of `t`.
double logprob(const ActorParams& params, const KnowledgeWorld& world, const Trajectory& t, std::size_t budget);

/// Applies one action to a trajectory in place (adds information for searches).
void extend(const KnowledgeWorld& world, Trajectory& t, const Action& a, double logprob);

void save_params(std::span<const double> values, std::ostream& out);
std::vector<double> load_params(std::istream& in);

} // namespace searchlab
