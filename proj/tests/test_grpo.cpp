// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

#include <searchlab/errors.hpp>
#include <searchlab/grpo.hpp>
#include <searchlab/oracle.hpp>

#include <cmath>
#include <numeric>

using namespace searchlab;
using namespace searchlab::testing;

namespace
{

struct Setup
{
    KnowledgeWorld world;
    ParamLayout layout;
    TrainConfig config;
    JointParams params;
    std::vector<GroupBatch> batches;
};

Setup make_setup(std::uint64_t seed, std::size_t groups = 4)
{
    WorldConfig wc;
    wc.num_entities = 8;
    wc.seed = seed;
    Setup s { generate_world(wc), {}, {}, {}, {} };
    s.layout = ParamLayout::of(wc);
    s.config.seed = seed;
    s.config.refine.max_revisions = 2;
    std::mt19937_64 gen(seed);
    s.params = JointParams { random_actor(wc, gen, 0.5), random_refiner(gen, 0.5) };
    Rng rng(seed + 100);
    // groups with equal rewards carry no signal; keep drawing until each has some
    for (std::size_t g = 0; s.batches.size() < groups; ++g)
    {
        REQUIRE(g < 1000 * groups);
        auto b = sample_group(s.params, s.world, QuestionId(g % s.world.questions().size()), s.config, rng);
        if (std::any_of(b.advantages.begin(), b.advantages.end(), [](double a) { return a != 0.0; }))
            s.batches.push_back(std::move(b));
    }
    return s;
}

std::vector<double> perturb(std::vector<double> theta, std::uint64_t seed, double scale)
{
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> n(0.0, scale);
    for (auto& v: theta)
        v += n(gen);
    return theta;
}

double norm(std::span<const double> v)
{
    return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
}

std::vector<double> finite_difference(const std::function<double(std::span<const double>)>& f,
                                      std::vector<double> theta, double h = 1e-5)
{
    std::vector<double> g(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i)
    {
        const double keep = theta[i];
        theta[i] = keep + h;
        const double up = f(theta);
        theta[i] = keep - h;
        const double down = f(theta);
        theta[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

double relative_error(std::span<const double> a, std::span<const double> b)
{
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        d[i] = a[i] - b[i];
    return norm(d) / std::max(norm(b), 1e-12);
}

} // namespace

TEST_CASE("group advantages")
{
    const auto a = group_advantages(std::vector { 2.0, 0.0, 1.0 });
    CHECK(a[0] == doctest::Approx(1.224744871).epsilon(1e-8));
    CHECK(a[1] == doctest::Approx(-1.224744871).epsilon(1e-8));
    CHECK(a[2] == doctest::Approx(0.0));
    CHECK(group_advantages(std::vector { 1.5, 1.5, 1.5, 1.5 }) == std::vector(4, 0.0));
    CHECK_THROWS_AS(group_advantages(std::vector { 1.0 }), PreconditionError);

    std::mt19937_64 gen(1);
    std::uniform_real_distribution<double> u(0.0, 2.0);
    for (int i = 0; i < 200; ++i)
    {
        std::vector<double> r(2 + i % 7);
        for (auto& v: r)
            v = u(gen);
        const auto adv = group_advantages(r);
        CHECK(std::abs(std::accumulate(adv.begin(), adv.end(), 0.0)) < 1e-9);
    }
}

TEST_CASE("parameter layout round-trips")
{
    WorldConfig wc;
    wc.num_relations = 3;
    const auto layout = ParamLayout::of(wc);
    std::mt19937_64 gen(3);
    const JointParams p { random_actor(wc, gen), random_refiner(gen) };
    const auto flat = p.flatten();
    CHECK(flat.size() == layout.size());
    CHECK(layout.disc_dim == disc_feature::dim);
    CHECK(layout.trim_dim == trim_feature::dim);
    CHECK(JointParams::unflatten(flat, layout) == p);
}

TEST_CASE("decision log-probabilities match the sampled trace")
{
    const auto s = make_setup(5, 8);
    for (const auto& b: s.batches)
        for (std::size_t i = 0; i < b.traces.size(); ++i)
        {
            const auto& tr = b.traces[i];
            double expected = tr.final.total_logprob();
            for (const auto& m: tr.meta)
                if (m.sampled)
                    expected += m.logprob;
            double got = 0.0;
            for (const auto& d: b.decisions[i])
                got += decision_logprob(d, s.params.flatten(), s.layout);
            CHECK(got == doctest::Approx(expected).epsilon(1e-12));
        }
}

TEST_CASE("gradient matches finite differences")
{
    for (std::uint64_t seed = 0; seed < 6; ++seed)
    {
        auto s = make_setup(seed);
        s.config.kl_beta = seed % 2 == 0 ? 0.0 : 0.3;
        const auto theta_old = s.params.flatten();
        const auto theta_ref = perturb(theta_old, seed + 7, 0.2);
        const auto theta = perturb(theta_old, seed + 11, 0.02);
        const auto res = loss_and_grad(theta, theta_old, s.batches, theta_ref, s.config, s.layout);
        const auto fd = finite_difference(
            [&](std::span<const double> t) {
                return loss_and_grad(t, theta_old, s.batches, theta_ref, s.config, s.layout).loss;
            },
            theta);
        CAPTURE(seed);
        CHECK(relative_error(res.grad, fd) < 1e-5);
    }
}

TEST_CASE("at the snapshot the surrogate reduces to the policy gradient")
{
    auto s = make_setup(9);
    s.config.kl_beta = 0.0;
    const auto theta = s.params.flatten();
    const auto res = loss_and_grad(theta, theta, s.batches, theta, s.config, s.layout);
    CHECK(res.mean_kl == 0.0);
    CHECK(res.clip_fraction == 0.0);

    // - mean_groups mean_traces A_i / L_i sum_t log pi(t)
    auto pg = [&](std::span<const double> t) {
        double j = 0.0;
        for (const auto& b: s.batches)
            for (std::size_t i = 0; i < b.decisions.size(); ++i)
            {
                const auto& ds = b.decisions[i];
                if (ds.empty())
                    continue;
                double lp = 0.0;
                for (const auto& d: ds)
                    lp += decision_logprob(d, t, s.layout);
                j += b.advantages[i] * lp / double(ds.size()) / double(b.decisions.size());
            }
        return -j / double(s.batches.size());
    };
    CHECK(relative_error(res.grad, finite_difference(pg, theta)) < 1e-5);
}

TEST_CASE("the KL term vanishes at the reference and grows away from it")
{
    auto s = make_setup(12);
    s.config.kl_beta = 1.0;
    const auto theta = s.params.flatten();
    CHECK(loss_and_grad(theta, theta, s.batches, theta, s.config, s.layout).mean_kl == 0.0);
    double last = 0.0;
    for (double scale: { 0.05, 0.2, 0.8 })
    {
        const auto ref = perturb(theta, 4, 1.0);
        std::vector<double> mid(theta.size());
        for (std::size_t i = 0; i < theta.size(); ++i)
            mid[i] = theta[i] + scale * (ref[i] - theta[i]);
        const double kl = loss_and_grad(theta, theta, s.batches, mid, s.config, s.layout).mean_kl;
        CHECK(kl > last);
        last = kl;
    }
}

TEST_CASE("clipping stops the surrogate gradient")
{
    auto s = make_setup(13);
    s.config.kl_beta = 0.0;
    s.config.clip_epsilon = 0.01;
    const auto theta_old = s.params.flatten();
    const auto theta = perturb(theta_old, 1, 2.0);
    const auto res = loss_and_grad(theta, theta_old, s.batches, theta_old, s.config, s.layout);
    CHECK(res.clip_fraction > 0.0);
    CHECK(res.clip_fraction < 1.0);
}

TEST_CASE("training is deterministic in the seed")
{
    WorldConfig wc;
    wc.num_entities = 8;
    wc.seed = 4;
    const auto w = generate_world(wc);
    TrainConfig c;
    c.steps = 20;
    c.prompts_per_step = 4;
    c.seed = 4;
    const auto a = train(c, w);
    const auto b = train(c, w);
    REQUIRE(a.curve.size() == 20);
    for (std::size_t i = 0; i < a.curve.size(); ++i)
        CHECK(to_csv_row(a.curve[i]) == to_csv_row(b.curve[i]));
    CHECK(a.final_params == b.final_params);
    c.seed = 5;
    CHECK_FALSE(train(c, w).final_params == a.final_params);
    CHECK_FALSE(a.final_params == JointParams::zeros(wc));
}

TEST_CASE("rollout accounting in the curve")
{
    WorldConfig wc;
    wc.num_entities = 20;
    wc.seed = 6;
    const auto w = generate_world(wc);
    TrainConfig c;
    c.steps = 10;
    c.prompts_per_step = 3;
    c.refine.max_revisions = 2;
    for (const auto& m: train(c, w).curve)
    {
        CHECK(m.initial_rollouts == c.prompts_per_step * c.group_size);
        CHECK(m.total_rollouts == m.initial_rollouts + m.refined_rollouts);
        CHECK(m.mean_revisions == doctest::Approx(double(m.refined_rollouts) / double(m.initial_rollouts)));
        CHECK(m.mean_revisions <= 2.0);
    }
}

TEST_CASE("a rollout budget ends training early")
{
    WorldConfig wc;
    wc.num_entities = 20;
    wc.seed = 6;
    const auto w = generate_world(wc);
    TrainConfig c;
    c.steps = 50;
    c.prompts_per_step = 2;
    const auto full = train(c, w);
    c.rollout_budget = 95;
    const auto cut = train(c, w);
    std::size_t total = 0;
    for (const auto& m: cut.curve)
        total += m.total_rollouts;
    CHECK(total >= 95);
    CHECK(total - cut.curve.back().total_rollouts < 95);
    REQUIRE(cut.curve.size() < full.curve.size());
    for (std::size_t i = 0; i < cut.curve.size(); ++i)
        CHECK(to_csv_row(cut.curve[i]) == to_csv_row(full.curve[i]));
}

TEST_CASE("freezing the actor trains only the refiner")
{
    WorldConfig wc;
    wc.num_entities = 20;
    wc.seed = 7;
    const auto w = generate_world(wc);
    TrainConfig c;
    c.steps = 30;
    c.prompts_per_step = 4;
    c.freeze_actor = true;
    const auto r = train(c, w);
    CHECK(r.final_params.actor == ActorParams::zeros(wc));
    CHECK_FALSE(r.final_params.refiner == RefinerParams::zeros());

    c.freeze_actor = false;
    c.freeze_refiner = true;
    const auto q = train(c, w);
    CHECK_FALSE(q.final_params.actor == ActorParams::zeros(wc));
    CHECK(q.final_params.refiner == RefinerParams::zeros());
}

TEST_CASE("a strong KL penalty anchors the weights")
{
    WorldConfig wc;
    wc.num_entities = 20;
    wc.seed = 8;
    const auto w = generate_world(wc);
    TrainConfig c;
    c.steps = 40;
    c.prompts_per_step = 4;
    c.learning_rate = 0.5;
    c.kl_beta = 0.0;
    const double free_norm = norm(train(c, w).final_params.flatten());
    c.kl_beta = 1.0;
    const double anchored_norm = norm(train(c, w).final_params.flatten());
    CHECK(free_norm > 0.0);
    CHECK(anchored_norm < free_norm);
}

TEST_CASE("sampled group rewards estimate the exact refined objective")
{
    for (std::uint64_t seed: { 2, 7, 11 })
    {
        auto f = random_fixture(seed);
        f.refine.max_revisions = 2;
        const auto space = enumerate_fixture(f);
        const auto q = mixture_density(space, 2);
        const double j = expectation(q, space.reward);
        double second = 0.0;
        for (std::size_t y = 0; y < space.size(); ++y)
            second += q[y] * space.reward[y] * space.reward[y];
        const double var = second - j * j;

        TrainConfig c;
        c.refine = f.refine;
        const JointParams p { f.actor, f.refiner };
        Rng rng(seed);
        const std::size_t groups = 2000;
        double sum = 0.0;
        for (std::size_t g = 0; g < groups; ++g)
        {
            const auto b = sample_group(p, f.world, f.question, c, rng);
            sum += std::accumulate(b.train_rewards.begin(), b.train_rewards.end(), 0.0);
        }
        const double n = double(groups * c.group_size);
        CAPTURE(seed);
        CHECK(std::abs(sum / n - j) <= 3.0 * std::sqrt(var / n) + 1e-12);
    }
}

TEST_CASE("config keys")
{
    TrainConfig c;
    c.set("group_size", "8");
    c.set("accept_mode", "threshold");
    c.set("freeze_actor", "true");
    c.set("learning_rate", "0.25");
    CHECK(c.group_size == 8);
    CHECK(c.refine.mode == AcceptMode::Threshold);
    CHECK(c.freeze_actor);
    CHECK(c.learning_rate == 0.25);
    TrainConfig back;
    for (const auto& [k, v]: c.to_map())
        back.set(k, v);
    CHECK(back.to_map() == c.to_map());

    CHECK_THROWS_AS(c.set("no_such_key", "1"), ConfigError);
    CHECK_THROWS_AS(c.set("learning_rate", "fast"), ConfigError);
    CHECK_THROWS_AS(c.set("freeze_actor", "maybe"), ConfigError);
    c.group_size = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.group_size = 4;
    c.clip_epsilon = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.clip_epsilon = 0.2;
    c.refine.budget = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}
