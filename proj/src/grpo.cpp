// SPDX-License-Identifier: Apache-2.0
#include <searchlab/errors.hpp>
#include <searchlab/grpo.hpp>
#include <searchlab/textio.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace searchlab
{

ParamLayout ParamLayout::of(const WorldConfig& config)
{
    ParamLayout l;
    l.actor_dim = actor_feature_dim(config);
    l.disc_offset = l.actor_dim;
    l.disc_dim = disc_feature::dim;
    l.trim_offset = l.disc_offset + l.disc_dim;
    l.trim_dim = trim_feature::dim;
    return l;
}

JointParams JointParams::zeros(const WorldConfig& config)
{
    return { ActorParams::zeros(config), RefinerParams::zeros() };
}

std::vector<double> JointParams::flatten() const
{
    std::vector<double> theta(actor.weights);
    theta.insert(theta.end(), refiner.disc_weights.begin(), refiner.disc_weights.end());
    theta.insert(theta.end(), refiner.trim_weights.begin(), refiner.trim_weights.end());
    return theta;
}

JointParams JointParams::unflatten(std::span<const double> theta, const ParamLayout& layout)
{
    if (theta.size() != layout.size())
        throw ConfigError("parameter vector has dimension " + std::to_string(theta.size()) + ", expected "
                          + std::to_string(layout.size()));
    auto slice = [&](std::size_t off, std::size_t n) {
        return std::vector<double>(theta.begin() + std::ptrdiff_t(off), theta.begin() + std::ptrdiff_t(off + n));
    };
    return { ActorParams { slice(layout.actor_offset, layout.actor_dim) },
             RefinerParams { slice(layout.disc_offset, layout.disc_dim), slice(layout.trim_offset, layout.trim_dim) } };
}

namespace
{

std::span<const double> weights_for(const Decision& d, std::span<const double> theta, const ParamLayout& l)
{
    switch (d.kind)
    {
        case DecisionKind::Actor: return theta.subspan(l.actor_offset, l.actor_dim);
        case DecisionKind::Discriminator: return theta.subspan(l.disc_offset, l.disc_dim);
        case DecisionKind::Trimmer: return theta.subspan(l.trim_offset, l.trim_dim);
    }
    return {};
}

std::size_t offset_for(const Decision& d, const ParamLayout& l)
{
    switch (d.kind)
    {
        case DecisionKind::Actor: return l.actor_offset;
        case DecisionKind::Discriminator: return l.disc_offset;
        case DecisionKind::Trimmer: return l.trim_offset;
    }
    return 0;
}

} // namespace

double decision_logprob(const Decision& d, std::span<const double> theta, const ParamLayout& layout)
{
    const auto w = weights_for(d, theta, layout);
    if (d.kind == DecisionKind::Discriminator)
    {
        const double z = dot(d.features.row(0), w);
        return d.chosen == 1 ? log_sigmoid(z) : log_sigmoid(-z);
    }
    return log_softmax(scores(d.features, w)).at(d.chosen);
}

void accumulate_logprob_grad(const Decision& d, std::span<const double> theta, const ParamLayout& layout,
                             double scale, std::span<double> grad)
{
    const auto w = weights_for(d, theta, layout);
    auto g = grad.subspan(offset_for(d, layout), w.size());
    if (d.kind == DecisionKind::Discriminator)
    {
        const auto phi = d.features.row(0);
        const double p = sigmoid(dot(phi, w));
        const double coef = d.chosen == 1 ? 1.0 - p : -p;
        for (std::size_t j = 0; j < g.size(); ++j)
            g[j] += scale * coef * phi[j];
        return;
    }
    const auto lp = log_softmax(scores(d.features, w));
    const auto chosen = d.features.row(d.chosen);
    for (std::size_t j = 0; j < g.size(); ++j)
        g[j] += scale * chosen[j];
    for (std::size_t i = 0; i < d.features.rows; ++i)
    {
        const double p = std::exp(lp[i]);
        const auto row = d.features.row(i);
        for (std::size_t j = 0; j < g.size(); ++j)
            g[j] -= scale * p * row[j];
    }
}

std::vector<Decision> actor_decisions(const KnowledgeWorld& world, const Trajectory& t, std::size_t budget,
                                      std::size_t from)
{
    const auto& q = world.question(t.question_id());
    auto state = ActorState::initial(q);
    std::vector<Decision> out;
    std::size_t k = 0;
    for (const auto& step: t.steps())
    {
        if (step.is_actor())
        {
            if (k >= from)
            {
                const auto support = legal_actions(world, state, budget);
                const auto a = Action::from_step(step);
                const auto it = std::find(support.begin(), support.end(), a);
                if (it == support.end())
                    throw EvaluationError("actor step " + std::to_string(k) + " is outside the legal support");
                Decision d { DecisionKind::Actor, FeatureMatrix(support.size(), actor_feature_dim(world.config())),
                             std::size_t(it - support.begin()) };
                for (std::size_t i = 0; i < support.size(); ++i)
                {
                    const auto phi = action_features(world, q, state, support[i], budget);
                    std::copy(phi.begin(), phi.end(), d.features.row(i).begin());
                }
                out.push_back(std::move(d));
            }
            ++k;
        }
        state.apply(q, step);
    }
    return out;
}

std::vector<Decision> trace_decisions(const KnowledgeWorld& world, const AugmentedTrace& trace,
                                      const RefineConfig& config)
{
    auto out = actor_decisions(world, trace.final, config.budget);
    std::size_t round = 0;
    for (const auto& m: trace.meta)
    {
        const auto& draft = trace.drafts.at(round);
        if (m.kind == MetaKind::Cut)
        {
            if (m.sampled)
                out.push_back({ DecisionKind::Trimmer, trim_features(world, draft, config.budget), m.cut });
            ++round;
        }
        else if (m.sampled)
        {
            const auto phi = discriminator_features(world, draft, config.budget);
            Decision d { DecisionKind::Discriminator, FeatureMatrix(1, phi.size()),
                         m.kind == MetaKind::Accept ? 1U : 0U };
            std::copy(phi.begin(), phi.end(), d.features.row(0).begin());
            out.push_back(std::move(d));
        }
    }
    return out;
}

void TrainConfig::validate() const
{
    if (group_size < 2)
        throw ConfigError("group size G must be >= 2");
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0))
        throw ConfigError("clip epsilon must lie in (0, 1)");
    if (!(kl_beta >= 0.0))
        throw ConfigError("kl beta must be >= 0");
    if (!(learning_rate > 0.0))
        throw ConfigError("learning rate must be > 0");
    if (prompts_per_step < 1)
        throw ConfigError("prompts_per_step must be >= 1");
    refine.validate();
}

std::map<std::string, std::string> TrainConfig::to_map() const
{
    using textio::format_double;
    return {
        { "group_size", std::to_string(group_size) },
        { "clip_epsilon", format_double(clip_epsilon) },
        { "kl_beta", format_double(kl_beta) },
        { "learning_rate", format_double(learning_rate) },
        { "steps", std::to_string(steps) },
        { "prompts_per_step", std::to_string(prompts_per_step) },
        { "budget", std::to_string(refine.budget) },
        { "max_revisions", std::to_string(refine.max_revisions) },
        { "tau", format_double(refine.tau) },
        { "accept_mode", std::string(to_string(refine.mode)) },
        { "trim_mode", std::string(to_string(refine.trim_mode)) },
        { "process_reward", process_reward ? "true" : "false" },
        { "seed", std::to_string(seed) },
        { "divergence_bound", format_double(divergence_bound) },
        { "freeze_actor", freeze_actor ? "true" : "false" },
        { "freeze_refiner", freeze_refiner ? "true" : "false" },
        { "rollout_budget", std::to_string(rollout_budget) },
    };
}

void TrainConfig::set(std::string_view key, std::string_view value)
{
    const std::string k(key);
    auto real = [&] {
        auto v = textio::parse_double(value);
        if (!v)
            throw ConfigError("'" + k + "' expects a real, got '" + std::string(value) + "'");
        return *v;
    };
    auto count = [&] {
        auto v = textio::parse_uint(value);
        if (!v)
            throw ConfigError("'" + k + "' expects an unsigned integer, got '" + std::string(value) + "'");
        return *v;
    };
    auto flag = [&] {
        if (value == "true" || value == "1" || value == "on")
            return true;
        if (value == "false" || value == "0" || value == "off")
            return false;
        throw ConfigError("'" + k + "' expects true/false");
    };
    if (k == "group_size")
        group_size = count();
    else if (k == "clip_epsilon")
        clip_epsilon = real();
    else if (k == "kl_beta")
        kl_beta = real();
    else if (k == "learning_rate")
        learning_rate = real();
    else if (k == "steps")
        steps = count();
    else if (k == "prompts_per_step")
        prompts_per_step = count();
    else if (k == "budget")
        refine.budget = count();
    else if (k == "max_revisions")
        refine.max_revisions = count();
    else if (k == "tau")
        refine.tau = real();
    else if (k == "accept_mode")
        refine.mode = parse_accept_mode(value);
    else if (k == "trim_mode")
        refine.trim_mode = parse_trim_mode(value);
    else if (k == "process_reward")
        process_reward = flag();
    else if (k == "seed")
        seed = count();
    else if (k == "divergence_bound")
        divergence_bound = real();
    else if (k == "freeze_actor")
        freeze_actor = flag();
    else if (k == "freeze_refiner")
        freeze_refiner = flag();
    else if (k == "rollout_budget")
        rollout_budget = count();
    else
        throw ConfigError("unknown training key '" + k + "'");
}

std::vector<double> group_advantages(std::span<const double> rewards)
{
    if (rewards.size() < 2)
        throw PreconditionError("group advantages need at least two rewards");
    const auto [lo, hi] = std::minmax_element(rewards.begin(), rewards.end());
    std::vector<double> out(rewards.size(), 0.0);
    if (*lo == *hi)
        return out;
    const double n = double(rewards.size());
    const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
    double var = 0.0;
    for (double r: rewards)
        var += (r - mean) * (r - mean);
    const double sd = std::sqrt(var / n);
    for (std::size_t i = 0; i < rewards.size(); ++i)
        out[i] = (rewards[i] - mean) / (sd + 1e-8);
    return out;
}

GroupBatch sample_group(const JointParams& params, const KnowledgeWorld& world, QuestionId question,
                        const TrainConfig& config, Rng& rng)
{
    GroupBatch batch;
    batch.question_id = question;
    for (std::size_t i = 0; i < config.group_size; ++i)
    {
        auto trace = refine_loop(params.actor, params.refiner, world, question, config.refine, rng);
        auto reward = hybrid_reward(trace.final, world);
        batch.train_rewards.push_back(config.process_reward ? reward.total : double(reward.outcome));
        batch.decisions.push_back(trace_decisions(world, trace, config.refine));
        batch.rewards.push_back(std::move(reward));
        batch.traces.push_back(std::move(trace));
    }
    batch.advantages = group_advantages(batch.train_rewards);
    return batch;
}

LossResult loss_and_grad(std::span<const double> theta, std::span<const double> theta_old,
                         std::span<const GroupBatch> batches, std::span<const double> theta_ref,
                         const TrainConfig& config, const ParamLayout& layout)
{
    LossResult res;
    res.grad.assign(layout.size(), 0.0);
    if (theta.size() != layout.size() || theta_old.size() != layout.size() || theta_ref.size() != layout.size())
        throw ConfigError("parameter vectors do not match the layout");
    if (batches.empty())
        return res;

    const double eps = config.clip_epsilon;
    const double beta = config.kl_beta;
    std::size_t clipped = 0;
    double objective = 0.0;
    double kl_sum = 0.0;

    for (std::size_t b = 0; b < batches.size(); ++b)
    {
        const auto& batch = batches[b];
        const double group_weight = 1.0 / (double(batches.size()) * double(batch.decisions.size()));
        for (std::size_t i = 0; i < batch.decisions.size(); ++i)
        {
            const auto& decisions = batch.decisions[i];
            if (decisions.empty())
                continue;
            const double adv = batch.advantages.at(i);
            const double w = group_weight / double(decisions.size());
            for (const auto& d: decisions)
            {
                const double lp = decision_logprob(d, theta, layout);
                const double lp_old = decision_logprob(d, theta_old, layout);
                const double lp_ref = decision_logprob(d, theta_ref, layout);
                const double ratio = std::exp(lp - lp_old);
                const double log_rho = lp_ref - lp;
                const double rho = std::exp(log_rho);
                const double k3 = (rho - 1.0) - log_rho;
                if (!std::isfinite(ratio) || !std::isfinite(k3))
                    throw NumericalError("non-finite ratio or KL term in group " + std::to_string(b) + ", trace "
                                         + std::to_string(i));

                const double unclipped = ratio * adv;
                const double clipped_term = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * adv;
                const bool clip_active = clipped_term < unclipped;
                objective += w * (std::min(unclipped, clipped_term) - beta * k3);
                kl_sum += k3;
                ++res.decisions;
                if (clip_active)
                    ++clipped;

                // d objective / d log pi: surrogate part plus the k3 part
                double coef = clip_active ? 0.0 : adv * ratio;
                coef -= beta * (1.0 - rho);
                if (coef != 0.0)
                    accumulate_logprob_grad(d, theta, layout, -w * coef, res.grad);
            }
        }
    }
    res.loss = -objective;
    res.mean_kl = res.decisions > 0 ? kl_sum / double(res.decisions) : 0.0;
    res.clip_fraction = res.decisions > 0 ? double(clipped) / double(res.decisions) : 0.0;
    return res;
}

std::string metrics_csv_header()
{
    return "step,mean_em,mean_reward,reject_rate,mean_revisions,grad_norm,kl,initial_rollouts,refined_rollouts,"
           "total_rollouts";
}

std::string to_csv_row(const StepMetrics& m)
{
    using textio::format_double;
    return std::to_string(m.step) + ',' + format_double(m.mean_em) + ',' + format_double(m.mean_reward) + ','
         + format_double(m.reject_rate) + ',' + format_double(m.mean_revisions) + ',' + format_double(m.grad_norm)
         + ',' + format_double(m.kl) + ',' + std::to_string(m.initial_rollouts) + ','
         + std::to_string(m.refined_rollouts) + ',' + std::to_string(m.total_rollouts);
}

TrainResult train(const TrainConfig& config, const KnowledgeWorld& world, const StepCallback& on_step)
{
    config.validate();
    const auto layout = ParamLayout::of(world.config());
    auto theta = JointParams::zeros(world.config()).flatten();
    const auto theta_ref = theta;
    const auto num_questions = world.questions().size();

    TrainResult result;
    std::size_t rollouts = 0;
    for (std::size_t step = 0; step < config.steps; ++step)
    {
        if (config.rollout_budget > 0 && rollouts >= config.rollout_budget)
            break;
        Rng pick(mix_seed({ config.seed, 0x7A1AULL, step }));
        const auto snapshot = JointParams::unflatten(theta, layout);
        std::vector<GroupBatch> batches;
        batches.reserve(config.prompts_per_step);
        for (std::size_t p = 0; p < config.prompts_per_step; ++p)
        {
            const auto q = QuestionId(std::uniform_int_distribution<std::size_t>(0, num_questions - 1)(pick));
            Rng rng(mix_seed({ config.seed, 0x6A0FULL, step, p }));
            batches.push_back(sample_group(snapshot, world, q, config, rng));
        }

        auto res = loss_and_grad(theta, theta, batches, theta_ref, config, layout);
        if (config.freeze_actor)
            std::fill_n(res.grad.begin() + std::ptrdiff_t(layout.actor_offset), layout.actor_dim, 0.0);
        if (config.freeze_refiner)
            std::fill(res.grad.begin() + std::ptrdiff_t(layout.disc_offset), res.grad.end(), 0.0);

        StepMetrics m;
        m.step = step;
        double grad_sq = 0.0;
        for (std::size_t j = 0; j < theta.size(); ++j)
        {
            grad_sq += res.grad[j] * res.grad[j];
            theta[j] -= config.learning_rate * res.grad[j];
        }
        m.grad_norm = std::sqrt(grad_sq);
        m.kl = res.mean_kl;

        std::size_t traces = 0;
        std::size_t verdicts = 0;
        std::size_t rejects = 0;
        for (const auto& b: batches)
            for (std::size_t i = 0; i < b.traces.size(); ++i)
            {
                ++traces;
                m.mean_em += b.rewards[i].outcome;
                m.mean_reward += b.train_rewards[i];
                m.refined_rollouts += b.traces[i].revisions_used;
                for (const auto& meta: b.traces[i].meta)
                {
                    verdicts += meta.kind != MetaKind::Cut ? 1 : 0;
                    rejects += meta.kind == MetaKind::Reject ? 1 : 0;
                }
            }
        m.initial_rollouts = traces;
        m.total_rollouts = traces + m.refined_rollouts;
        m.mean_em /= double(traces);
        m.mean_reward /= double(traces);
        m.mean_revisions = double(m.refined_rollouts) / double(traces);
        m.reject_rate = verdicts > 0 ? double(rejects) / double(verdicts) : 0.0;

        double mean_abs = 0.0;
        for (double v: theta)
        {
            if (!std::isfinite(v))
                throw NumericalError("non-finite parameter after step " + std::to_string(step));
            mean_abs += std::abs(v);
        }
        mean_abs /= double(theta.size());
        if (mean_abs > config.divergence_bound)
            throw NumericalError("training diverged at step " + std::to_string(step) + ": mean |theta| = "
                                 + textio::format_double(mean_abs));

        rollouts += m.total_rollouts;
        result.curve.push_back(m);
        if (on_step)
            on_step(m, JointParams::unflatten(theta, layout));
    }
    result.final_params = JointParams::unflatten(theta, layout);
    return result;
}

EvalResult evaluate(const JointParams& params, const KnowledgeWorld& world, const RefineConfig& config,
                    std::size_t samples, std::uint64_t seed)
{
    EvalResult r;
    std::size_t n = 0;
    for (const auto& q: world.questions())
        for (std::size_t s = 0; s < samples; ++s)
        {
            Rng rng(mix_seed({ seed, 0xE7A1ULL, q.id, s }));
            const auto trace = refine_loop(params.actor, params.refiner, world, q.id, config, rng);
            const auto reward = hybrid_reward(trace.final, world);
            r.mean_em += reward.outcome;
            r.mean_reward += reward.total;
            r.mean_revisions += double(trace.revisions_used);
            r.total_rollouts += 1 + trace.revisions_used;
            ++n;
        }
    if (n > 0)
    {
        r.mean_em /= double(n);
        r.mean_reward /= double(n);
        r.mean_revisions /= double(n);
    }
    return r;
}

} // namespace searchlab
