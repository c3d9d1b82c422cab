// SPDX-License-Identifier: Apache-2.0
#include <searchlab/actor.hpp>
#include <searchlab/errors.hpp>
#include <searchlab/textio.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <string>

namespace searchlab
{

Action Action::from_step(const Step& step)
{
    switch (step.kind())
    {
        case StepKind::Think: return think(std::get<ThinkPayload>(step.payload).token);
        case StepKind::Search: return search(std::get<Query>(step.payload));
        case StepKind::Answer: return answer(std::get<AnswerPayload>(step.payload).entity);
        case StepKind::Information: break;
    }
    throw std::invalid_argument("information steps are not actions");
}

Step Action::to_step(double logprob) const
{
    switch (kind)
    {
        case ActionKind::Think: return Step::think(token, logprob);
        case ActionKind::Search: return Step::search(query, logprob);
        case ActionKind::Answer: return Step::answer(entity, logprob);
    }
    return {};
}

ActorState ActorState::initial(const Question& q)
{
    ActorState s;
    s.known = { q.start };
    s.frontier = q.start;
    return s;
}

ActorState ActorState::replay(const Question& q, std::span<const Step> steps)
{
    auto s = initial(q);
    for (const auto& step: steps)
        s.apply(q, step);
    return s;
}

void ActorState::apply(const Question& q, const Step& step)
{
    switch (step.kind())
    {
        case StepKind::Think: ++budget_used; break;
        case StepKind::Search:
            ++budget_used;
            ++searches;
            issued.insert(std::get<Query>(step.payload));
            break;
        case StepKind::Answer: terminal = true; break;
        case StepKind::Information:
            for (const auto& chunk: std::get<QueryResult>(step.payload).chunks)
            {
                if (!chunk.content)
                    continue;
                observed.insert(*chunk.content);
                for (auto e: { chunk.content->subject, chunk.content->object })
                {
                    auto it = std::lower_bound(known.begin(), known.end(), e);
                    if (it == known.end() || *it != e)
                        known.insert(it, e);
                }
            }
            // follow the relation path through everything observed so far
            for (bool moved = true; moved && progress < q.relations.size();)
            {
                moved = false;
                const auto next = q.relations[progress];
                auto it = std::find_if(observed.begin(), observed.end(), [&](const Triple& t) {
                    return t.subject == frontier && t.relation == next;
                });
                if (it != observed.end())
                {
                    frontier = it->object;
                    ++progress;
                    moved = true;
                }
            }
            break;
    }
}

bool ActorState::on_frontier_edge(const Question& q, Query query) const
{
    return progress < q.relations.size() && query.entity == frontier && query.relation == q.relations[progress];
}

bool ActorState::resolved_answer(const Question& q, EntityId e) const
{
    return progress == q.relations.size() && e == frontier;
}

bool ActorState::is_flawed(const Question& q, const Action& a) const
{
    switch (a.kind)
    {
        case ActionKind::Think: return true;
        case ActionKind::Search: return !on_frontier_edge(q, a.query);
        case ActionKind::Answer: return !resolved_answer(q, a.entity);
    }
    return true;
}

std::size_t actor_feature_dim(const WorldConfig& config)
{
    return actor_feature::relation_base + config.num_relations;
}

std::size_t ActionDistribution::find(const Action& a) const
{
    return std::size_t(std::find(support.begin(), support.end(), a) - support.begin());
}

std::vector<Action> legal_actions(const KnowledgeWorld& world, const ActorState& state, std::size_t budget)
{
    std::vector<Action> out;
    if (state.terminal || state.budget_used >= budget)
        return out;
    const auto relations = world.config().num_relations;
    out.reserve(1 + state.known.size() * (relations + 1));
    out.push_back(Action::think(std::uint32_t(state.known.size())));
    for (auto e: state.known)
        for (RelationId r = 0; r < relations; ++r)
            out.push_back(Action::search({ e, r }));
    for (auto e: state.known)
        out.push_back(Action::answer(e));
    return out;
}

std::vector<double> action_features(const KnowledgeWorld& world, const Question& q, const ActorState& state,
                                    const Action& a, std::size_t budget)
{
    namespace f = actor_feature;
    std::vector<double> phi(actor_feature_dim(world.config()), 0.0);
    const double share = budget > 0 ? double(state.budget_used) / double(budget) : 0.0;
    switch (a.kind)
    {
        case ActionKind::Think: phi[f::think_bias] = 1.0; break;
        case ActionKind::Search:
        {
            const bool next_rel = state.progress < q.relations.size() && a.query.relation == q.relations[state.progress];
            phi[f::search_bias] = 1.0;
            phi[f::search_frontier_entity] = a.query.entity == state.frontier ? 1.0 : 0.0;
            phi[f::search_next_relation] = next_rel ? 1.0 : 0.0;
            phi[f::search_frontier_edge] = state.on_frontier_edge(q, a.query) ? 1.0 : 0.0;
            phi[f::search_repeated] = state.issued.contains(a.query) ? 1.0 : 0.0;
            phi[f::search_budget_share] = share;
            phi[f::relation_base + a.query.relation] = 1.0;
            break;
        }
        case ActionKind::Answer:
            phi[f::answer_bias] = 1.0;
            phi[f::answer_frontier] = a.entity == state.frontier ? 1.0 : 0.0;
            phi[f::answer_resolved] = state.resolved_answer(q, a.entity) ? 1.0 : 0.0;
            phi[f::answer_budget_share] = share;
            phi[f::answer_question_entity] = a.entity == q.start ? 1.0 : 0.0;
            break;
    }
    return phi;
}

ActionDistribution action_distribution(const ActorParams& params, const KnowledgeWorld& world, const Question& q,
                                       const ActorState& state, std::size_t budget)
{
    ActionDistribution dist;
    dist.support = legal_actions(world, state, budget);
    const auto dim = actor_feature_dim(world.config());
    if (params.weights.size() != dim)
        throw ConfigError("actor weights have dimension " + std::to_string(params.weights.size()) + ", expected "
                          + std::to_string(dim));
    dist.features = FeatureMatrix(dist.support.size(), dim);
    for (std::size_t i = 0; i < dist.support.size(); ++i)
    {
        const auto phi = action_features(world, q, state, dist.support[i], budget);
        std::copy(phi.begin(), phi.end(), dist.features.row(i).begin());
    }
    dist.log_probabilities = log_softmax(scores(dist.features, params.weights));
    dist.probabilities.resize(dist.log_probabilities.size());
    std::transform(dist.log_probabilities.begin(), dist.log_probabilities.end(), dist.probabilities.begin(),
                   [](double lp) { return std::exp(lp); });
    return dist;
}

void extend(const KnowledgeWorld& world, Trajectory& t, const Action& a, double logprob)
{
    const auto ordinal = std::uint32_t(t.turn_count());
    t.push_back(a.to_step(logprob));
    if (a.kind == ActionKind::Search)
        t.push_back(Step::information(world.search(t.question_id(), a.query, ordinal)));
}

namespace
{

Trajectory continue_sampling(const ActorParams& params, const KnowledgeWorld& world, Trajectory t,
                             std::size_t budget, Rng& rng)
{
    const auto& q = world.question(t.question_id());
    auto state = ActorState::replay(q, t.steps());
    for (;;)
    {
        const auto dist = action_distribution(params, world, q, state, budget);
        if (dist.support.empty())
            break;
        const auto i = sample_categorical(dist.probabilities, rng);
        const auto before = t.steps().size();
        extend(world, t, dist.support[i], dist.log_probabilities[i]);
        for (auto s = before; s < t.steps().size(); ++s)
            state.apply(q, t.steps()[s]);
    }
    return t;
}

} // namespace

Trajectory rollout(const ActorParams& params, const KnowledgeWorld& world, QuestionId question, std::size_t budget,
                   Rng& rng)
{
    if (budget < 1)
        throw PreconditionError("turn budget must be >= 1");
    return continue_sampling(params, world, Trajectory(question), budget, rng);
}

Trajectory regenerate(const ActorParams& params, const KnowledgeWorld& world, const Prefix& prefix,
                      std::size_t budget, Rng& rng)
{
    if (prefix.trajectory.is_terminal())
        throw PreconditionError("cannot regenerate from a prefix that already answers");
    if (prefix.trajectory.budget_used() > budget)
        throw PreconditionError("prefix already exceeds the turn budget");
    return continue_sampling(params, world, prefix.trajectory, budget, rng);
}

double logprob(const ActorParams& params, const KnowledgeWorld& world, const Trajectory& t, std::size_t budget)
{
    const auto& q = world.question(t.question_id());
    auto state = ActorState::initial(q);
    double total = 0.0;
    for (std::size_t i = 0; i < t.steps().size(); ++i)
    {
        const auto& step = t.steps()[i];
        if (step.is_actor())
        {
            const auto dist = action_distribution(params, world, q, state, budget);
            const auto a = Action::from_step(step);
            const auto idx = dist.find(a);
            if (idx == dist.support.size())
                throw EvaluationError("step " + std::to_string(i) + " is outside the legal action support");
            total += dist.log_probabilities[idx];
        }
        state.apply(q, step);
    }
    return total;
}

void save_params(std::span<const double> values, std::ostream& out)
{
    out << "dim " << values.size() << '\n';
    for (double v: values)
        out << textio::format_double(v) << '\n';
}

std::vector<double> load_params(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line))
        throw ParseError(1, "missing dimension header");
    const auto head = textio::split_ws(line);
    std::optional<std::uint64_t> dim;
    if (head.size() == 2 && head[0] == "dim")
        dim = textio::parse_uint(head[1]);
    if (!dim)
        throw ParseError(1, "expected 'dim N'");
    std::vector<double> values;
    values.reserve(*dim);
    std::size_t line_no = 1;
    while (values.size() < *dim && std::getline(in, line))
    {
        ++line_no;
        auto v = textio::parse_double(textio::trim(line));
        if (!v || !std::isfinite(*v))
            throw ParseError(line_no, "expected a finite real");
        values.push_back(*v);
    }
    if (values.size() != *dim)
        throw ParseError(line_no, "expected " + std::to_string(*dim) + " values, got " + std::to_string(values.size()));
    return values;
}

} // namespace searchlab
