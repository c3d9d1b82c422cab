// SPDX-License-Identifier: Apache-2.0
#include <searchlab/errors.hpp>
#include <searchlab/refiner.hpp>
#include <searchlab/textio.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace searchlab
{

std::string_view to_string(AcceptMode mode)
{
    return mode == AcceptMode::Bernoulli ? "bernoulli" : "threshold";
}

std::string_view to_string(TrimMode mode)
{
    return mode == TrimMode::Learned ? "learned" : "full_regeneration";
}

AcceptMode parse_accept_mode(std::string_view text)
{
    if (text == "bernoulli")
        return AcceptMode::Bernoulli;
    if (text == "threshold")
        return AcceptMode::Threshold;
    throw ConfigError("unknown accept mode '" + std::string(text) + "'");
}

TrimMode parse_trim_mode(std::string_view text)
{
    if (text == "learned")
        return TrimMode::Learned;
    if (text == "full_regeneration")
        return TrimMode::FullRegeneration;
    throw ConfigError("unknown trim mode '" + std::string(text) + "'");
}

void RefineConfig::validate() const
{
    if (budget < 1)
        throw ConfigError("turn budget must be >= 1");
    if (!(tau > 0.0 && tau < 1.0))
        throw ConfigError("tau must lie in (0, 1)");
}

namespace
{

void check_dims(const RefinerParams& p)
{
    if (p.disc_weights.size() != disc_feature::dim || p.trim_weights.size() != trim_feature::dim)
        throw ConfigError("refiner weights have the wrong dimension");
}

std::size_t repeated_searches(const Trajectory& t)
{
    std::set<Query> seen;
    std::size_t repeats = 0;
    for (const auto& q: t.queries())
        if (!seen.insert(q).second)
            ++repeats;
    return repeats;
}

double useful_count(const KnowledgeWorld& world, const Trajectory& t)
{
    const auto results = t.query_results();
    const auto u = chunk_utility(world, t.question_id(), results);
    return double(std::accumulate(u.begin(), u.end(), 0));
}

} // namespace

std::vector<double> discriminator_features(const KnowledgeWorld& world, const Trajectory& t, std::size_t budget)
{
    namespace f = disc_feature;
    const auto& q = world.question(t.question_id());
    const auto state = ActorState::replay(q, t.steps());
    const double hops = double(q.relations.size());
    const double b = double(std::max<std::size_t>(budget, 1));

    std::vector<double> phi(f::dim, 0.0);
    phi[f::bias] = 1.0;
    phi[f::answered] = t.answer() ? 1.0 : 0.0;
    phi[f::useful_share] = useful_count(world, t) / hops;
    phi[f::redundant_share] = double(repeated_searches(t)) / b;
    phi[f::budget_share] = double(t.budget_used()) / b;
    // resolved_answer() is judged on the state before the answer step, which
    // has the same frontier and progress as the final state
    phi[f::resolved_answer] = t.answer() && state.resolved_answer(q, *t.answer()) ? 1.0 : 0.0;
    phi[f::progress_share] = double(state.progress) / hops;
    return phi;
}

double discriminate(const RefinerParams& params, const KnowledgeWorld& world, const Trajectory& t,
                    std::size_t budget)
{
    check_dims(params);
    return sigmoid(dot(params.disc_weights, discriminator_features(world, t, budget)));
}

AcceptDecision accept(const RefinerParams& params, const KnowledgeWorld& world, const Trajectory& t,
                      const RefineConfig& config, Rng& rng)
{
    check_dims(params);
    const double z = dot(params.disc_weights, discriminator_features(world, t, config.budget));
    AcceptDecision d;
    d.probability = sigmoid(z);
    if (config.mode == AcceptMode::Threshold)
    {
        d.accepted = d.probability >= config.tau;
        d.logprob = 0.0;
        d.sampled = false;
        return d;
    }
    d.accepted = uniform01(rng) < d.probability;
    d.logprob = d.accepted ? log_sigmoid(z) : log_sigmoid(-z);
    d.sampled = true;
    return d;
}

FeatureMatrix trim_features(const KnowledgeWorld& world, const Trajectory& t, std::size_t budget)
{
    (void) budget;
    namespace f = trim_feature;
    const auto& q = world.question(t.question_id());
    const auto total = t.actor_step_count();
    const double hops = double(q.relations.size());
    FeatureMatrix m(total, f::dim);

    auto state = ActorState::initial(q);
    bool flaw_seen = false;
    std::vector<QueryResult> history;
    std::size_t k = 0;
    for (const auto& step: t.steps())
    {
        if (step.is_actor())
        {
            // row k describes keeping k actor steps and cutting this one
            const auto a = Action::from_step(step);
            const bool flawed = state.is_flawed(q, a);
            const auto u = chunk_utility(world, t.question_id(), history);
            auto row = m.row(k);
            row[f::position] = double(k) / double(total);
            row[f::prefix_progress] = double(state.progress) / hops;
            row[f::prefix_useful] = double(std::accumulate(u.begin(), u.end(), 0)) / hops;
            row[f::prefix_has_flaw] = flaw_seen ? 1.0 : 0.0;
            row[f::next_is_flaw] = flawed ? 1.0 : 0.0;
            row[f::next_is_think] = a.kind == ActionKind::Think ? 1.0 : 0.0;
            row[f::next_is_answer] = a.kind == ActionKind::Answer ? 1.0 : 0.0;
            row[f::next_is_repeat] = a.kind == ActionKind::Search && state.issued.contains(a.query) ? 1.0 : 0.0;
            flaw_seen = flaw_seen || flawed;
            ++k;
        }
        else
            history.push_back(std::get<QueryResult>(step.payload));
        state.apply(q, step);
    }
    return m;
}

std::vector<double> trim_distribution(const RefinerParams& params, const KnowledgeWorld& world,
                                      const Trajectory& t, std::size_t budget)
{
    check_dims(params);
    const auto m = trim_features(world, t, budget);
    auto lp = log_softmax(scores(m, params.trim_weights));
    for (auto& v: lp)
        v = std::exp(v);
    return lp;
}

CutDecision trim(const RefinerParams& params, const KnowledgeWorld& world, const Trajectory& t,
                 const RefineConfig& config, Rng& rng)
{
    if (t.actor_step_count() == 0)
        throw PreconditionError("cannot trim a trajectory without actor steps");
    if (config.trim_mode == TrimMode::FullRegeneration)
        return CutDecision { 0, 0.0, false };
    check_dims(params);
    const auto m = trim_features(world, t, config.budget);
    const auto lp = log_softmax(scores(m, params.trim_weights));
    std::vector<double> p(lp.size());
    std::transform(lp.begin(), lp.end(), p.begin(), [](double v) { return std::exp(v); });
    const auto k = sample_categorical(p, rng);
    return CutDecision { k, lp[k], true };
}

double AugmentedTrace::total_logprob() const
{
    double sum = drafts.empty() ? 0.0 : drafts.front().total_logprob();
    std::size_t round = 0;
    for (const auto& m: meta)
    {
        if (m.sampled)
            sum += m.logprob;
        if (m.kind == MetaKind::Cut)
        {
            const auto& next = drafts.at(round + 1);
            const auto start = m.cut == 0 ? 0 : next.actor_step_index(m.cut - 1) + 1;
            for (auto i = start; i < next.steps().size(); ++i)
                if (next.steps()[i].actor_logprob)
                    sum += *next.steps()[i].actor_logprob;
            ++round;
        }
    }
    return sum;
}

void AugmentedTrace::validate(std::size_t max_revisions) const
{
    if (revisions_used > max_revisions)
        throw StructuralError("revisions_used exceeds the revision budget");
    if (drafts.size() != revisions_used + 1 || drafts.back() != final)
        throw StructuralError("draft list does not match the revision count");
    std::size_t round = 0;
    for (std::size_t i = 0; i < meta.size(); ++i)
    {
        const auto& m = meta[i];
        if (m.logprob > 0.0)
            throw StructuralError("meta-action log-probability must be <= 0");
        if (m.kind == MetaKind::Accept)
        {
            if (i + 1 != meta.size())
                throw StructuralError("accept must terminate the meta sequence");
        }
        else if (m.kind == MetaKind::Reject)
        {
            if (i + 1 >= meta.size() || meta[i + 1].kind != MetaKind::Cut)
                throw StructuralError("reject must be followed by a cut");
        }
        else
        {
            if (i == 0 || meta[i - 1].kind != MetaKind::Reject)
                throw StructuralError("cut must follow a reject");
            const auto kept = take_prefix(drafts.at(round), m.cut).trajectory.steps();
            const auto& next = drafts.at(round + 1).steps();
            if (next.size() < kept.size() || !std::equal(kept.begin(), kept.end(), next.begin()))
                throw StructuralError("draft " + std::to_string(round + 1) + " does not keep the cut prefix");
            ++round;
        }
    }
    if (round != revisions_used)
        throw StructuralError("cut count does not match revisions_used");
}

AugmentedTrace refine_loop(const ActorParams& actor, const RefinerParams& refiner, const KnowledgeWorld& world,
                           QuestionId question, const RefineConfig& config, Rng& rng)
{
    config.validate();
    AugmentedTrace trace;
    trace.mode = config.mode;
    auto draft = rollout(actor, world, question, config.budget, rng);
    trace.drafts.push_back(draft);

    bool accepted = false;
    while (trace.revisions_used < config.max_revisions)
    {
        const auto verdict = accept(refiner, world, draft, config, rng);
        if (verdict.accepted)
        {
            trace.meta.push_back({ MetaKind::Accept, 0, verdict.logprob, verdict.sampled });
            accepted = true;
            break;
        }
        trace.meta.push_back({ MetaKind::Reject, 0, verdict.logprob, verdict.sampled });
        const auto cut = trim(refiner, world, draft, config, rng);
        trace.meta.push_back({ MetaKind::Cut, cut.cut, cut.logprob, cut.sampled });
        draft = regenerate(actor, world, take_prefix(draft, cut.cut), config.budget, rng);
        trace.drafts.push_back(draft);
        ++trace.revisions_used;
    }
    if (!accepted && config.max_revisions > 0)
        trace.final_verdict = discriminate(refiner, world, draft, config.budget);
    trace.final = std::move(draft);
    return trace;
}

std::string serialize_trace(const AugmentedTrace& trace)
{
    std::ostringstream out;
    out << "# trace revisions=" << trace.revisions_used << " mode=" << to_string(trace.mode) << '\n';
    std::size_t draft = 0;
    out << "# draft 0\n" << serialize(trace.drafts.at(0));
    for (const auto& m: trace.meta)
    {
        out << "# meta ";
        switch (m.kind)
        {
            case MetaKind::Accept: out << "accept"; break;
            case MetaKind::Reject: out << "reject"; break;
            case MetaKind::Cut: out << "cut k=" << m.cut; break;
        }
        out << " lp=" << textio::format_double(m.logprob) << " sampled=" << (m.sampled ? 1 : 0) << '\n';
        if (m.kind == MetaKind::Cut)
        {
            ++draft;
            out << "# draft " << draft << '\n' << serialize(trace.drafts.at(draft));
        }
    }
    if (trace.final_verdict)
        out << "# final verdict=" << textio::format_double(*trace.final_verdict) << '\n';
    return out.str();
}

AugmentedTrace parse_trace(std::string_view text)
{
    AugmentedTrace trace;
    std::string block;
    bool in_block = false;
    std::size_t line_no = 0;

    auto field = [&](std::span<const std::string_view> toks, std::string_view key) -> std::string_view {
        for (auto tok: toks)
            if (auto kv = textio::split_key_value(tok); kv && kv->first == key)
                return kv->second;
        throw ParseError(line_no, "missing " + std::string(key) + "=");
    };
    auto number = [&](std::string_view s) {
        auto v = textio::parse_double(s);
        if (!v)
            throw ParseError(line_no, "bad number '" + std::string(s) + "'");
        return *v;
    };

    while (!text.empty())
    {
        const auto nl = text.find('\n');
        const auto raw = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view {} : text.substr(nl + 1);
        ++line_no;
        const auto line = textio::trim(raw);
        if (in_block)
        {
            block.append(line).push_back('\n');
            if (line == "</trajectory>")
            {
                trace.drafts.push_back(parse_trajectory(block));
                block.clear();
                in_block = false;
            }
            continue;
        }
        if (line.starts_with("<trajectory"))
        {
            in_block = true;
            block.append(line).push_back('\n');
            continue;
        }
        if (line.empty() || !line.starts_with('#'))
        {
            if (!line.empty())
                throw ParseError(line_no, "unexpected content outside a trajectory record");
            continue;
        }
        const auto toks = textio::split_ws(line.substr(1));
        if (toks.empty())
            continue;
        if (toks[0] == "trace")
            trace.mode = parse_accept_mode(field(toks, "mode"));
        else if (toks[0] == "meta" && toks.size() >= 2)
        {
            MetaAction m;
            if (toks[1] == "accept")
                m.kind = MetaKind::Accept;
            else if (toks[1] == "reject")
                m.kind = MetaKind::Reject;
            else if (toks[1] == "cut")
            {
                m.kind = MetaKind::Cut;
                m.cut = std::size_t(number(field(toks, "k")));
            }
            else
                throw ParseError(line_no, "unknown meta-action");
            m.logprob = number(field(toks, "lp"));
            m.sampled = field(toks, "sampled") == "1";
            trace.meta.push_back(m);
            if (m.kind == MetaKind::Cut)
                ++trace.revisions_used;
        }
        else if (toks[0] == "final")
            trace.final_verdict = number(field(toks, "verdict"));
    }
    if (in_block)
        throw ParseError(line_no, "unbalanced <trajectory> in trace");
    if (trace.drafts.empty())
        throw ParseError(line_no, "trace holds no drafts");
    trace.final = trace.drafts.back();
    return trace;
}

} // namespace searchlab
