// SPDX-License-Identifier: Apache-2.0
#include <searchlab/errors.hpp>
#include <searchlab/harness.hpp>
#include <searchlab/textio.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>

namespace searchlab
{

std::string_view to_string(Variant v)
{
    switch (v)
    {
        case Variant::NoRefiner: return "no_refiner";
        case Variant::NoProcessReward: return "no_process_reward";
        case Variant::ActorRefinerFull: return "actor_refiner_full";
        case Variant::RejectionSampling: return "rejection_sampling";
    }
    return "?";
}

Variant parse_variant(std::string_view text)
{
    for (auto v: { Variant::NoRefiner, Variant::NoProcessReward, Variant::ActorRefinerFull,
                   Variant::RejectionSampling })
        if (text == to_string(v))
            return v;
    throw ConfigError("unknown variant '" + std::string(text) + "'");
}

std::optional<Variant> predecessor(Variant v)
{
    switch (v)
    {
        case Variant::NoRefiner: return std::nullopt;
        case Variant::NoProcessReward: return Variant::NoRefiner;
        case Variant::ActorRefinerFull: return Variant::NoProcessReward;
        case Variant::RejectionSampling: return Variant::ActorRefinerFull;
    }
    return std::nullopt;
}

Mechanisms mechanisms(Variant v)
{
    switch (v)
    {
        case Variant::NoRefiner: return { false, false, true };
        case Variant::NoProcessReward: return { true, false, true };
        case Variant::ActorRefinerFull: return { true, true, true };
        case Variant::RejectionSampling: return { true, true, false };
    }
    return {};
}

TrainConfig apply_variant(TrainConfig base, Variant v)
{
    const auto m = mechanisms(v);
    if (!m.refiner)
        base.refine.max_revisions = 0;
    else if (base.refine.max_revisions == 0)
        base.refine.max_revisions = 1;
    base.process_reward = m.process_reward;
    base.refine.trim_mode = m.learned_trim ? TrimMode::Learned : TrimMode::FullRegeneration;
    return base;
}

std::string effective_config_header(const TrainConfig& train, const WorldConfig& world, Variant v)
{
    using textio::format_double;
    std::ostringstream out;
    out << "# variant=" << to_string(v) << '\n';
    for (const auto& [k, val]: train.to_map())
        out << "# " << k << '=' << val << '\n';
    out << "# world.entities=" << world.num_entities << '\n'
        << "# world.relations=" << world.num_relations << '\n'
        << "# world.hops=" << world.hop_count << '\n'
        << "# world.top_k=" << world.top_k << '\n'
        << "# world.distractor_rate=" << format_double(world.distractor_rate) << '\n'
        << "# world.seed=" << world.seed << '\n'
        << "# world.questions=" << world.question_count() << '\n';
    return out.str();
}

void ExperimentSpec::validate() const
{
    if (seeds.empty())
        throw ConfigError("an experiment needs at least one seed");
    if (eval_samples < 1)
        throw ConfigError("eval_samples must be >= 1");
    apply_variant(train, variant).validate();
    world.validate();
}

void ExperimentSpec::set(std::string_view key, std::string_view value)
{
    const std::string k(key);
    auto count = [&] {
        auto v = textio::parse_uint(value);
        if (!v)
            throw ConfigError("'" + k + "' expects an unsigned integer, got '" + std::string(value) + "'");
        return *v;
    };
    auto u32 = [&] {
        const auto v = count();
        if (v > 0xFFFFFFFFULL)
            throw ConfigError("'" + k + "' is out of range");
        return std::uint32_t(v);
    };
    if (k == "name")
        name = std::string(value);
    else if (k == "variant")
        variant = parse_variant(value);
    else if (k == "eval_samples")
        eval_samples = count();
    else if (k == "eval_mode")
        eval_mode = parse_accept_mode(value);
    else if (k == "seeds")
    {
        // either a count ("20" -> 0..19) or a comma list
        seeds.clear();
        if (value.find(',') == std::string_view::npos)
        {
            for (std::uint64_t s = 0; s < count(); ++s)
                seeds.push_back(s);
        }
        else
        {
            std::string list(value);
            std::replace(list.begin(), list.end(), ',', ' ');
            for (const auto& tok: textio::split_ws(list))
            {
                auto v = textio::parse_uint(tok);
                if (!v)
                    throw ConfigError("bad seed '" + std::string(tok) + "'");
                seeds.push_back(*v);
            }
        }
    }
    else if (k == "world.entities")
        world.num_entities = u32();
    else if (k == "world.relations")
        world.num_relations = u32();
    else if (k == "world.hops")
        world.hop_count = u32();
    else if (k == "world.top_k")
        world.top_k = u32();
    else if (k == "world.questions")
        world.num_questions = u32();
    else if (k == "world.distractor_rate")
    {
        auto v = textio::parse_double(value);
        if (!v)
            throw ConfigError("'" + k + "' expects a real");
        world.distractor_rate = *v;
    }
    else
        train.set(key, value);
}

ExperimentSpec parse_experiment(std::istream& in, ExperimentSpec base)
{
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line))
    {
        ++n;
        auto body = std::string_view(line);
        if (const auto hash = body.find('#'); hash != std::string_view::npos)
            body = body.substr(0, hash);
        body = textio::trim(body);
        if (body.empty())
            continue;
        const auto kv = textio::split_key_value(body);
        if (!kv)
            throw ParseError(n, "expected key=value, got '" + std::string(body) + "'");
        base.set(textio::trim(kv->first), textio::trim(kv->second));
    }
    return base;
}

Stat summarize(std::span<const double> values)
{
    Stat s;
    if (values.empty())
        return s;
    for (double v: values)
        s.mean += v;
    s.mean /= double(values.size());
    if (values.size() > 1)
    {
        for (double v: values)
            s.stddev += (v - s.mean) * (v - s.mean);
        s.stddev = std::sqrt(s.stddev / double(values.size() - 1));
    }
    return s;
}

namespace
{

template <class F>
std::vector<double> collect(const std::vector<SeedResult>& runs, F field)
{
    std::vector<double> out;
    for (const auto& r: runs)
        if (r.ok)
            out.push_back(field(r));
    return out;
}

double refined_share(std::span<const StepMetrics> curve)
{
    double refined = 0.0;
    double total = 0.0;
    for (const auto& m: curve)
    {
        refined += double(m.refined_rollouts);
        total += double(m.total_rollouts);
    }
    return total > 0.0 ? refined / total : 0.0;
}

} // namespace

std::vector<double> ExperimentResult::final_em() const
{
    return collect(runs, [](const SeedResult& r) { return r.final_em; });
}

Stat ExperimentResult::em() const
{
    return summarize(final_em());
}

Stat ExperimentResult::reward() const
{
    return summarize(collect(runs, [](const SeedResult& r) { return r.final_reward; }));
}

Stat ExperimentResult::revisions() const
{
    return summarize(collect(runs, [](const SeedResult& r) { return r.final_revisions; }));
}

double ExperimentResult::mean_train_rollouts() const
{
    return summarize(collect(runs, [](const SeedResult& r) { return double(r.train_rollouts); })).mean;
}

std::size_t ExperimentResult::failures() const
{
    return std::size_t(std::count_if(runs.begin(), runs.end(), [](const SeedResult& r) { return !r.ok; }));
}

SeedResult run_seed(const ExperimentSpec& spec, std::uint64_t seed)
{
    SeedResult r;
    r.seed = seed;
    try
    {
        auto config = apply_variant(spec.train, spec.variant);
        config.seed = seed;
        auto wc = spec.world;
        wc.seed = seed;
        const auto world = generate_world(wc);
        auto trained = train(config, world);
        r.curve = std::move(trained.curve);
        r.params = std::move(trained.final_params);

        auto eval_config = config.refine;
        eval_config.mode = spec.eval_mode;
        const auto ev = evaluate(r.params, world, eval_config, spec.eval_samples, mix_seed({ seed, 0xE0A1ULL }));
        r.final_em = ev.mean_em;
        r.final_reward = ev.mean_reward;
        r.final_revisions = ev.mean_revisions;
        for (const auto& m: r.curve)
        {
            r.train_rollouts += m.total_rollouts;
            r.train_refined_rollouts += m.refined_rollouts;
        }
        const auto tenth = std::max<std::size_t>(1, r.curve.size() / 10);
        if (!r.curve.empty())
        {
            r.early_refined_share = refined_share(std::span(r.curve).first(std::min(tenth, r.curve.size())));
            r.late_refined_share = refined_share(std::span(r.curve).last(std::min(tenth, r.curve.size())));
        }
        r.ok = true;
    }
    catch (const std::exception& e)
    {
        r.ok = false;
        r.error = e.what();
    }
    return r;
}

namespace
{

void write_seed_csv(const std::filesystem::path& path, const ExperimentSpec& spec, const SeedResult& r)
{
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    auto config = apply_variant(spec.train, spec.variant);
    config.seed = r.seed;
    auto wc = spec.world;
    wc.seed = r.seed;
    out << effective_config_header(config, wc, spec.variant);
    out << "# eval_mode=" << to_string(spec.eval_mode) << '\n' << "# eval_samples=" << spec.eval_samples << '\n';
    if (!r.ok)
        out << "# failed=" << r.error << '\n';
    out << metrics_csv_header() << '\n';
    for (const auto& m: r.curve)
        out << to_csv_row(m) << '\n';
}

} // namespace

std::string summary_csv(const ExperimentResult& result)
{
    using textio::format_double;
    std::ostringstream out;
    out << "seed,status,final_em,final_reward,final_revisions,train_rollouts,train_refined_rollouts,"
           "early_refined_share,late_refined_share\n";
    for (const auto& r: result.runs)
    {
        if (!r.ok)
        {
            auto msg = r.error;
            std::replace(msg.begin(), msg.end(), ',', ';');
            std::replace(msg.begin(), msg.end(), '\n', ' ');
            out << r.seed << ",failed:" << msg << ",,,,,,,\n";
            continue;
        }
        out << r.seed << ",ok," << format_double(r.final_em) << ',' << format_double(r.final_reward) << ','
            << format_double(r.final_revisions) << ',' << r.train_rollouts << ',' << r.train_refined_rollouts << ','
            << format_double(r.early_refined_share) << ',' << format_double(r.late_refined_share) << '\n';
    }
    const auto em = result.em();
    const auto reward = result.reward();
    const auto rev = result.revisions();
    out << "mean,," << format_double(em.mean) << ',' << format_double(reward.mean) << ',' << format_double(rev.mean)
        << ',' << format_double(result.mean_train_rollouts()) << ",,,\n";
    out << "std,," << format_double(em.stddev) << ',' << format_double(reward.stddev) << ','
        << format_double(rev.stddev) << ",,,,\n";
    return out.str();
}

namespace
{

ExperimentResult run_seeds(const ExperimentSpec& spec, const std::function<ExperimentSpec(std::uint64_t)>& spec_for,
                           const std::optional<std::filesystem::path>& out_dir)
{
    ExperimentResult result;
    result.spec = spec;
    std::vector<double> seconds;
    std::vector<std::size_t> steps;
    if (out_dir)
        std::filesystem::create_directories(*out_dir);
    for (const auto seed: spec.seeds)
    {
        const auto run_spec = spec_for(seed);
        run_spec.validate();
        const auto t0 = std::chrono::steady_clock::now();
        result.runs.push_back(run_seed(run_spec, seed));
        seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        steps.push_back(result.runs.back().curve.size());
        if (out_dir)
            write_seed_csv(*out_dir / ("seed_" + std::to_string(seed) + ".csv"), run_spec, result.runs.back());
    }
    if (out_dir)
    {
        std::ofstream(*out_dir / "summary.csv") << summary_csv(result);
        std::ofstream timing(*out_dir / "timing.csv");
        timing << "seed,wall_seconds,seconds_per_step\n";
        for (std::size_t i = 0; i < seconds.size(); ++i)
            timing << spec.seeds[i] << ',' << seconds[i] << ','
                   << seconds[i] / double(std::max<std::size_t>(1, steps[i])) << '\n';
    }
    return result;
}

} // namespace

ExperimentResult run_experiment(const ExperimentSpec& spec, const std::optional<std::filesystem::path>& out_dir)
{
    spec.validate();
    return run_seeds(spec, [&](std::uint64_t) { return spec; }, out_dir);
}

ExperimentResult run_matched_budget(const ExperimentSpec& spec, const ExperimentResult& reference,
                                    const std::optional<std::filesystem::path>& out_dir, std::size_t step_headroom)
{
    spec.validate();
    auto matched = spec;
    matched.seeds.clear();
    std::map<std::uint64_t, std::size_t> budgets;
    for (const auto& r: reference.runs)
    {
        if (!r.ok)
            throw PreconditionError("reference run for seed " + std::to_string(r.seed) + " failed");
        matched.seeds.push_back(r.seed);
        budgets[r.seed] = r.train_rollouts;
    }
    return run_seeds(
        matched,
        [&](std::uint64_t seed) {
            auto s = matched;
            s.train.rollout_budget = budgets.at(seed);
            s.train.steps = spec.train.steps * step_headroom;
            return s;
        },
        out_dir);
}

SignTest sign_test(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size())
        throw PreconditionError("sign test needs paired samples of equal length");
    SignTest t;
    for (std::size_t i = 0; i < a.size(); ++i)
    {
        if (a[i] > b[i])
            ++t.wins;
        else if (a[i] < b[i])
            ++t.losses;
        else
            ++t.ties;
    }
    const auto n = t.wins + t.losses;
    // upper binomial tail, summed in log space
    double p = 0.0;
    for (std::size_t k = t.wins; k <= n; ++k)
        p += std::exp(std::lgamma(double(n + 1)) - std::lgamma(double(k + 1)) - std::lgamma(double(n - k + 1))
                      - double(n) * std::log(2.0));
    t.p_value = n == 0 ? 1.0 : std::min(1.0, p);
    return t;
}

std::vector<ScanRow> revision_scan(const ExperimentSpec& base, std::span<const std::size_t> max_revisions,
                                   const std::optional<std::filesystem::path>& out_dir)
{
    std::vector<ScanRow> rows;
    for (const auto n: max_revisions)
    {
        auto spec = base;
        spec.train.refine.max_revisions = n;
        if (n == 0)
            spec.variant = Variant::NoRefiner;
        spec.name = base.name + "_nmax" + std::to_string(n);
        std::optional<std::filesystem::path> dir;
        if (out_dir)
            dir = *out_dir / ("nmax_" + std::to_string(n));
        const auto res = run_experiment(spec, dir);

        ScanRow row;
        row.max_revisions = n;
        row.em = res.em();
        row.revisions = res.revisions();
        row.failures = res.failures();
        std::vector<double> initial, refined, early, late;
        for (const auto& r: res.runs)
        {
            if (!r.ok)
                continue;
            double init = 0.0;
            for (const auto& m: r.curve)
                init += double(m.initial_rollouts);
            initial.push_back(init);
            refined.push_back(double(r.train_refined_rollouts));
            early.push_back(r.early_refined_share);
            late.push_back(r.late_refined_share);
        }
        row.initial_rollouts = summarize(initial).mean;
        row.refined_rollouts = summarize(refined).mean;
        row.total_rollouts = row.initial_rollouts + row.refined_rollouts;
        row.early_refined_share = summarize(early).mean;
        row.late_refined_share = summarize(late).mean;
        rows.push_back(row);
    }
    if (out_dir)
    {
        std::filesystem::create_directories(*out_dir);
        std::ofstream(*out_dir / "scan.txt") << format_scan(rows);
    }
    return rows;
}

std::string format_scan(std::span<const ScanRow> rows)
{
    using textio::format_double;
    std::ostringstream out;
    out << "max_revisions,em_mean,em_std,eval_revisions,initial_rollouts,refined_rollouts,total_rollouts,"
           "early_refined_share,late_refined_share,failures\n";
    for (const auto& r: rows)
        out << r.max_revisions << ',' << format_double(r.em.mean) << ',' << format_double(r.em.stddev) << ','
            << format_double(r.revisions.mean) << ',' << format_double(r.initial_rollouts) << ','
            << format_double(r.refined_rollouts) << ',' << format_double(r.total_rollouts) << ','
            << format_double(r.early_refined_share) << ',' << format_double(r.late_refined_share) << ','
            << r.failures << '\n';
    return out.str();
}

} // namespace searchlab
