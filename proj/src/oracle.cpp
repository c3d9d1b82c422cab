// SPDX-License-Identifier: Apache-2.0
#include <searchlab/errors.hpp>
#include <searchlab/oracle.hpp>
#include <searchlab/reward.hpp>
#include <searchlab/textio.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace searchlab
{

namespace
{

std::string action_key(const Trajectory& t)
{
    std::string key;
    for (const auto& step: t.steps())
    {
        if (!step.is_actor())
            continue;
        const auto a = Action::from_step(step);
        key += std::to_string(int(a.kind)) + ':' + std::to_string(a.token) + ':' + std::to_string(a.query.entity)
             + ':' + std::to_string(a.query.relation) + ':' + std::to_string(a.entity) + ';';
    }
    return key;
}

struct Expander
{
    const ActorParams& params;
    const KnowledgeWorld& world;
    const Question& question;
    std::size_t bound;
    EnumeratedSpace& space;
    std::vector<std::size_t> path;

    void expand(const Trajectory& t, const ActorState& state, std::size_t parent, double probability)
    {
        const auto idx = space.nodes.size();
        space.nodes.push_back({ parent, path.size(), probability, 0.0, 0, space.size(), 0 });
        path.push_back(idx);

        const auto dist = action_distribution(params, world, question, state, space.budget);
        if (dist.support.empty())
        {
            if (space.size() >= bound)
                throw CapacityError(space.size() + 1, bound);
            space.index.emplace(action_key(t), space.size());
            space.trajectories.push_back(t);
            space.probability.push_back(probability);
            space.reward.push_back(hybrid_reward(t, world).total);
            space.path.push_back(path);
        }
        else
        {
            for (std::size_t i = 0; i < dist.support.size(); ++i)
            {
                auto child = t;
                extend(world, child, dist.support[i], dist.log_probabilities[i]);
                auto next = state;
                for (auto s = t.steps().size(); s < child.steps().size(); ++s)
                    next.apply(question, child.steps()[s]);
                expand(child, next, idx, probability * dist.probabilities[i]);
            }
        }

        path.pop_back();
        space.nodes[idx].subtree_end = space.nodes.size();
        space.nodes[idx].leaf_end = space.size();
    }
};

} // namespace

std::size_t EnumeratedSpace::find(const Trajectory& t) const
{
    if (t.question_id() != question)
        return size();
    const auto it = index.find(action_key(t));
    return it == index.end() ? size() : it->second;
}

EnumeratedSpace enumerate(const ActorParams& params, const KnowledgeWorld& world, QuestionId question,
                          std::size_t budget, std::size_t bound)
{
    if (budget < 1)
        throw PreconditionError("turn budget must be >= 1");
    EnumeratedSpace space;
    space.question = question;
    space.budget = budget;
    const auto& q = world.question(question);
    Expander ex { params, world, q, bound, space, {} };
    ex.expand(Trajectory(question), ActorState::initial(q), 0, 1.0);

    // Values bottom-up: children follow their parent in preorder.
    std::vector<double> mass(space.nodes.size(), 0.0);
    for (std::size_t y = 0; y < space.size(); ++y)
        mass[space.path[y].back()] = space.probability[y] * space.reward[y];
    for (std::size_t n = space.nodes.size(); n-- > 1;)
        mass[space.nodes[n].parent] += mass[n];
    for (std::size_t n = 0; n < space.nodes.size(); ++n)
        space.nodes[n].value = mass[n] / space.nodes[n].probability;

    space.alpha.assign(space.size(), 1.0);
    space.trim.resize(space.size());
    for (std::size_t y = 0; y < space.size(); ++y)
    {
        space.trim[y].assign(space.length(y), 0.0);
        space.trim[y].at(0) = 1.0;
    }
    return space;
}

void attach_refiner(EnumeratedSpace& space, const RefinerParams& params, const KnowledgeWorld& world,
                    const RefineConfig& config)
{
    for (std::size_t y = 0; y < space.size(); ++y)
    {
        const double p = discriminate(params, world, space.trajectories[y], space.budget);
        space.alpha[y] = config.mode == AcceptMode::Bernoulli ? p : (p >= config.tau ? 1.0 : 0.0);
        if (config.trim_mode == TrimMode::FullRegeneration)
        {
            std::fill(space.trim[y].begin(), space.trim[y].end(), 0.0);
            space.trim[y][0] = 1.0;
        }
        else
            space.trim[y] = trim_distribution(params, world, space.trajectories[y], space.budget);
    }
}

std::vector<double> oracle_alpha(const EnumeratedSpace& space)
{
    const double best = *std::max_element(space.reward.begin(), space.reward.end());
    std::vector<double> out(space.size());
    for (std::size_t y = 0; y < space.size(); ++y)
        out[y] = space.reward[y] == best ? 1.0 : 0.0;
    return out;
}

std::vector<std::vector<double>> oracle_trim(const EnumeratedSpace& space)
{
    std::vector<std::vector<double>> out(space.size());
    for (std::size_t y = 0; y < space.size(); ++y)
    {
        out[y].assign(space.length(y), 0.0);
        std::size_t best = 0;
        for (std::size_t k = 1; k < space.length(y); ++k)
            if (space.value_at(y, k) > space.value_at(y, best) + 1e-12)
                best = k;
        out[y][best] = 1.0;
    }
    return out;
}

std::vector<std::vector<double>> uniform_trim(const EnumeratedSpace& space)
{
    std::vector<std::vector<double>> out(space.size());
    for (std::size_t y = 0; y < space.size(); ++y)
        out[y].assign(space.length(y), 1.0 / double(space.length(y)));
    return out;
}

std::vector<double> repair_density(const EnumeratedSpace& space, std::span<const double> p)
{
    std::vector<double> injected(space.nodes.size(), 0.0);
    for (std::size_t y = 0; y < space.size(); ++y)
    {
        const double rejected = p[y] * (1.0 - space.alpha[y]);
        if (rejected == 0.0)
            continue;
        for (std::size_t k = 0; k < space.trim[y].size(); ++k)
        {
            const auto node = space.path[y][k];
            injected[node] += rejected * space.trim[y][k] / space.nodes[node].probability;
        }
    }
    for (std::size_t n = 1; n < space.nodes.size(); ++n)
        injected[n] += injected[space.nodes[n].parent];
    std::vector<double> out(space.size());
    for (std::size_t y = 0; y < space.size(); ++y)
        out[y] = space.probability[y] * injected[space.path[y].back()];
    return out;
}

std::vector<double> mixture_density(const EnumeratedSpace& space, std::size_t max_revisions)
{
    std::vector<double> q(space.size(), 0.0);
    std::vector<double> draft = space.probability;
    for (std::size_t round = 0; round < max_revisions; ++round)
    {
        for (std::size_t y = 0; y < space.size(); ++y)
            q[y] += draft[y] * space.alpha[y];
        draft = repair_density(space, draft);
    }
    for (std::size_t y = 0; y < space.size(); ++y)
        q[y] += draft[y];
    return q;
}

double trace_probability(const EnumeratedSpace& space, const AugmentedTrace& trace)
{
    auto locate = [&](const Trajectory& t) {
        const auto y = space.find(t);
        if (y == space.size())
            throw EvaluationError("draft is outside the enumerated space");
        return y;
    };
    auto current = locate(trace.drafts.at(0));
    double p = space.probability[current];
    std::size_t round = 0;
    for (const auto& m: trace.meta)
    {
        switch (m.kind)
        {
            case MetaKind::Accept: p *= space.alpha[current]; break;
            case MetaKind::Reject: p *= 1.0 - space.alpha[current]; break;
            case MetaKind::Cut:
            {
                if (m.cut >= space.trim[current].size())
                    throw EvaluationError("cut index outside the draft");
                const auto node = space.path[current][m.cut];
                const auto next = locate(trace.drafts.at(++round));
                if (next < space.nodes[node].leaf_begin || next >= space.nodes[node].leaf_end)
                    return 0.0;
                p *= space.trim[current][m.cut] * space.probability[next] / space.nodes[node].probability;
                current = next;
                break;
            }
        }
    }
    return p;
}

double expectation(std::span<const double> weights, std::span<const double> x)
{
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        s += weights[i] * x[i];
    return s;
}

double covariance(std::span<const double> weights, std::span<const double> x, std::span<const double> y)
{
    double xy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        xy += weights[i] * x[i] * y[i];
    return xy - expectation(weights, x) * expectation(weights, y);
}

double covariance_two_pass(std::span<const double> weights, std::span<const double> x, std::span<const double> y)
{
    const double mx = expectation(weights, x);
    const double my = expectation(weights, y);
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        s += weights[i] * (x[i] - mx) * (y[i] - my);
    return s;
}

std::vector<double> trim_values(const EnumeratedSpace& space)
{
    std::vector<double> out(space.size(), 0.0);
    for (std::size_t y = 0; y < space.size(); ++y)
        for (std::size_t k = 0; k < space.trim[y].size(); ++k)
            out[y] += space.trim[y][k] * space.value_at(y, k);
    return out;
}

MixtureDecomposition verify_mixture_decomposition(const EnumeratedSpace& space)
{
    MixtureDecomposition d;
    const auto& w = space.probability;
    const auto q = mixture_density(space, 1);
    const auto j_trim = trim_values(space);
    std::vector<double> excess(space.size());
    for (std::size_t y = 0; y < space.size(); ++y)
        excess[y] = space.reward[y] - j_trim[y];

    d.j_base = expectation(w, space.reward);
    d.j_meta_direct = expectation(q, space.reward);
    d.z_acc = expectation(w, space.alpha);
    d.v_inter = 1.0 - d.z_acc;
    d.j_trim_bar = expectation(w, j_trim);
    d.a_prec = covariance(w, space.alpha, excess);
    d.covariance_residual = std::abs(d.a_prec - covariance_two_pass(w, space.alpha, excess));
    d.j_meta_decomposed = d.j_base + d.a_prec + d.v_inter * (d.j_trim_bar - d.j_base);
    d.residual = std::abs(d.j_meta_direct - d.j_meta_decomposed);
    return d;
}

std::string_view to_string(DraftDistribution d)
{
    return d == DraftDistribution::Unconditional ? "unconditional" : "rejection_conditioned";
}

TrimDecomposition verify_trim_decomposition(const EnumeratedSpace& space, DraftDistribution distribution)
{
    TrimDecomposition d;
    d.distribution = distribution;
    std::vector<double> w = space.probability;
    if (distribution == DraftDistribution::RejectionConditioned)
    {
        double z = 0.0;
        for (std::size_t y = 0; y < space.size(); ++y)
        {
            w[y] *= 1.0 - space.alpha[y];
            z += w[y];
        }
        if (!(z > 0.0))
        {
            d.defined = false;
            return d;
        }
        for (double& v: w)
            v /= z;
    }

    const auto j_trim = trim_values(space);
    d.delta_direct = expectation(w, j_trim) - expectation(w, space.reward);

    std::size_t longest = 0;
    for (std::size_t y = 0; y < space.size(); ++y)
        longest = std::max(longest, space.length(y));
    std::vector<double> h(space.size());
    std::vector<double> g(space.size());
    for (std::size_t k = 0; k < longest; ++k)
    {
        for (std::size_t y = 0; y < space.size(); ++y)
        {
            const bool inside = k < space.length(y);
            h[y] = inside ? space.trim[y][k] : 0.0;
            g[y] = inside ? space.gain_at(y, k) : 0.0;
        }
        d.s_trim += covariance(w, h, g);
        d.g_bar += expectation(w, h) * expectation(w, g);
    }
    d.residual = std::abs(d.delta_direct - (d.s_trim + d.g_bar));
    return d;
}

GainDecomposition verify_gain_decomposition(const EnumeratedSpace& space)
{
    const auto m = verify_mixture_decomposition(space);
    const auto t = verify_trim_decomposition(space, DraftDistribution::Unconditional);
    GainDecomposition d;
    d.delta_direct = m.j_meta_direct - m.j_base;
    d.a_prec = m.a_prec;
    d.v_inter = m.v_inter;
    d.s_trim = t.s_trim;
    d.g_bar = t.g_bar;
    d.delta_decomposed = d.a_prec + d.v_inter * (d.s_trim + d.g_bar);
    d.residual = std::abs(d.delta_direct - d.delta_decomposed);
    return d;
}

bool DecompositionReport::pass() const
{
    return std::all_of(residuals.begin(), residuals.end(), [](const Residual& r) { return r.pass(); });
}

DecompositionReport decompose(const EnumeratedSpace& space, double tolerance, double normalization_tolerance)
{
    DecompositionReport r;
    r.trajectories = space.size();

    double pi_sum = 0.0;
    for (double p: space.probability)
        pi_sum += p;
    double trim_err = 0.0;
    for (const auto& h: space.trim)
    {
        double s = 0.0;
        for (double v: h)
            s += v;
        trim_err = std::max(trim_err, std::abs(s - 1.0));
    }
    r.residuals.push_back({ "base_normalization", std::abs(pi_sum - 1.0), 1e-12 });
    r.residuals.push_back({ "trim_normalization", trim_err, 1e-12 });
    for (std::size_t n = 1; n <= 3; ++n)
    {
        double s = 0.0;
        for (double v: mixture_density(space, n))
            s += v;
        r.residuals.push_back({ "mixture_normalization_n" + std::to_string(n), std::abs(s - 1.0),
                                normalization_tolerance });
    }

    const auto m = verify_mixture_decomposition(space);
    const auto t = verify_trim_decomposition(space, DraftDistribution::Unconditional);
    const auto c = verify_trim_decomposition(space, DraftDistribution::RejectionConditioned);
    const auto g = verify_gain_decomposition(space);
    r.j_base = m.j_base;
    r.j_meta_direct = m.j_meta_direct;
    r.j_meta_decomposed = m.j_meta_decomposed;
    r.a_prec = m.a_prec;
    r.v_inter = m.v_inter;
    r.z_acc = m.z_acc;
    r.j_trim_bar = m.j_trim_bar;
    r.s_trim = t.s_trim;
    r.g_bar = t.g_bar;
    r.rejection_conditioned = c;

    r.residuals.push_back({ "covariance_forms", m.covariance_residual, 1e-12 });
    r.residuals.push_back({ "mixture_decomposition", m.residual, tolerance });
    r.residuals.push_back({ "trim_decomposition_unconditional", t.residual, tolerance });
    r.residuals.push_back({ "trim_decomposition_rejection_conditioned", c.residual, tolerance });
    r.residuals.push_back({ "gain_decomposition", g.residual, tolerance });
    return r;
}

OracleFixture random_fixture(std::uint64_t seed, double weight_scale)
{
    Rng rng(mix_seed({ seed, 0xF1C7ULL }));
    auto pick = [&](std::uint32_t lo, std::uint32_t hi) {
        return std::uniform_int_distribution<std::uint32_t>(lo, hi)(rng);
    };
    WorldConfig wc;
    wc.hop_count = pick(1, 2);
    wc.num_relations = pick(1, 2);
    wc.num_entities = pick(wc.hop_count + 2, 7);
    wc.top_k = pick(1, 2);
    wc.distractor_rate = uniform01(rng);
    wc.seed = rng();
    wc.num_questions = 1;
    OracleFixture f { generate_world(wc), ActorParams::zeros(wc), RefinerParams::zeros(), {}, 0 };
    std::normal_distribution<double> normal(0.0, weight_scale);
    for (auto& w: f.actor.weights)
        w = normal(rng);
    for (auto& w: f.refiner.disc_weights)
        w = normal(rng);
    for (auto& w: f.refiner.trim_weights)
        w = normal(rng);
    f.refine.budget = pick(2, 3);
    f.refine.max_revisions = 1;
    return f;
}

EnumeratedSpace enumerate_fixture(const OracleFixture& f, std::size_t bound)
{
    auto space = enumerate(f.actor, f.world, f.question, f.refine.budget, bound);
    attach_refiner(space, f.refiner, f.world, f.refine);
    return space;
}

std::string format_report(const DecompositionReport& r)
{
    using textio::format_double;
    std::ostringstream out;
    out << "trajectories " << r.trajectories << '\n'
        << "J_base " << format_double(r.j_base) << '\n'
        << "J_meta_direct " << format_double(r.j_meta_direct) << '\n'
        << "J_meta_decomposed " << format_double(r.j_meta_decomposed) << '\n'
        << "A_prec " << format_double(r.a_prec) << '\n'
        << "V_inter " << format_double(r.v_inter) << '\n'
        << "Z_acc " << format_double(r.z_acc) << '\n'
        << "J_trim_bar " << format_double(r.j_trim_bar) << '\n'
        << "S_trim " << format_double(r.s_trim) << '\n'
        << "G_bar " << format_double(r.g_bar) << '\n';
    if (r.rejection_conditioned.defined)
        out << "S_trim_rejected " << format_double(r.rejection_conditioned.s_trim) << '\n'
            << "G_bar_rejected " << format_double(r.rejection_conditioned.g_bar) << '\n';
    for (const auto& res: r.residuals)
        out << (res.pass() ? "PASS " : "FAIL ") << res.name << " residual=" << format_double(res.value)
            << " tol=" << format_double(res.tolerance) << '\n';
    return out.str();
}

nlohmann::json to_json(const DecompositionReport& r)
{
    nlohmann::json j;
    j["trajectories"] = r.trajectories;
    j["J_base"] = r.j_base;
    j["J_meta_direct"] = r.j_meta_direct;
    j["J_meta_decomposed"] = r.j_meta_decomposed;
    j["A_prec"] = r.a_prec;
    j["V_inter"] = r.v_inter;
    j["Z_acc"] = r.z_acc;
    j["J_trim_bar"] = r.j_trim_bar;
    j["S_trim"] = r.s_trim;
    j["G_bar"] = r.g_bar;
    if (r.rejection_conditioned.defined)
    {
        j["S_trim_rejected"] = r.rejection_conditioned.s_trim;
        j["G_bar_rejected"] = r.rejection_conditioned.g_bar;
    }
    auto& res = j["residuals"];
    res = nlohmann::json::array();
    for (const auto& x: r.residuals)
        res.push_back({ { "name", x.name }, { "value", x.value }, { "tolerance", x.tolerance }, { "pass", x.pass() } });
    j["pass"] = r.pass();
    return j;
}

} // namespace searchlab
