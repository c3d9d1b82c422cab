// SPDX-License-Identifier: Apache-2.0
// Command-line front end: world generation, training, oracle verification,
// ablations, the revision scan and trace replay.

#include <searchlab/errors.hpp>
#include <searchlab/harness.hpp>
#include <searchlab/oracle.hpp>
#include <searchlab/textio.hpp>

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace searchlab;
namespace fs = std::filesystem;

namespace
{

fs::path output_root(const std::string& flag)
{
    if (!flag.empty())
        return flag;
    if (const char* env = std::getenv("SEARCHLAB_OUTPUT_DIR"); env && *env)
        return env;
    return "searchlab-out";
}

void add_world_flags(CLI::App& app, WorldConfig& wc)
{
    app.add_option("--seed", wc.seed, "world seed");
    app.add_option("--entities", wc.num_entities, "number of entities");
    app.add_option("--relations", wc.num_relations, "number of relations");
    app.add_option("--hops", wc.hop_count, "relation hops per question");
    app.add_option("--top-k", wc.top_k, "chunks per search result");
    app.add_option("--distractor-rate", wc.distractor_rate, "chance a non-matching slot holds a distractor");
    app.add_option("--questions", wc.num_questions, "question count (0 = derived)");
}

struct ExperimentFlags
{
    std::string config;
    std::vector<std::string> overrides;
    std::string out_dir;
};

void add_experiment_flags(CLI::App& app, ExperimentFlags& f)
{
    app.add_option("--config", f.config, "key=value experiment file");
    app.add_option("--set", f.overrides, "override one key, e.g. --set steps=100")->take_all();
    app.add_option("--out-dir", f.out_dir, "output directory (default $SEARCHLAB_OUTPUT_DIR)");
}

ExperimentSpec load_spec(const ExperimentFlags& f, ExperimentSpec base = {})
{
    if (!f.config.empty())
    {
        std::ifstream in(f.config);
        if (!in)
            throw ConfigError("cannot open config '" + f.config + "'");
        base = parse_experiment(in, std::move(base));
    }
    for (const auto& o: f.overrides)
    {
        const auto kv = textio::split_key_value(o);
        if (!kv)
            throw ConfigError("--set expects key=value, got '" + o + "'");
        base.set(kv->first, kv->second);
    }
    return base;
}

void print_result(const ExperimentResult& r)
{
    const auto em = r.em();
    const auto rev = r.revisions();
    std::cout << r.spec.name << " (" << to_string(r.spec.variant) << "): final EM " << textio::format_double(em.mean) << " +- "
              << textio::format_double(em.stddev) << ", revisions " << textio::format_double(rev.mean)
              << ", train rollouts " << textio::format_double(r.mean_train_rollouts()) << ", failures "
              << r.failures() << '\n';
}

int cmd_gen_world(const WorldConfig& wc, const std::string& out)
{
    const auto world = generate_world(wc);
    if (out.empty() || out == "-")
        save_world(world, std::cout);
    else
    {
        std::ofstream file(out);
        save_world(world, file);
    }
    return 0;
}

int cmd_train(const ExperimentFlags& f, const std::string& variant, std::uint64_t seed, std::size_t checkpoint_every)
{
    auto spec = load_spec(f);
    if (!variant.empty())
        spec.variant = parse_variant(variant);
    spec.validate();
    auto config = apply_variant(spec.train, spec.variant);
    config.seed = seed;
    auto wc = spec.world;
    wc.seed = seed;
    const auto world = generate_world(wc);

    const auto dir = output_root(f.out_dir) / ("train_" + std::string(to_string(spec.variant)) + "_seed"
                                               + std::to_string(seed));
    fs::create_directories(dir);
    std::ofstream metrics(dir / "metrics.csv");
    metrics << effective_config_header(config, wc, spec.variant) << metrics_csv_header() << '\n';
    auto result = train(config, world, [&](const StepMetrics& m, const JointParams& p) {
        metrics << to_csv_row(m) << '\n';
        if (checkpoint_every > 0 && (m.step + 1) % checkpoint_every == 0)
        {
            std::ofstream ck(dir / ("checkpoint_" + std::to_string(m.step + 1) + ".txt"));
            save_params(p.flatten(), ck);
        }
    });
    {
        std::ofstream ck(dir / "final_params.txt");
        save_params(result.final_params.flatten(), ck);
    }
    auto eval_config = config.refine;
    eval_config.mode = spec.eval_mode;
    const auto ev = evaluate(result.final_params, world, eval_config, spec.eval_samples, seed);
    std::cout << "final EM " << textio::format_double(ev.mean_em) << ", reward "
              << textio::format_double(ev.mean_reward) << ", revisions " << textio::format_double(ev.mean_revisions)
              << "\nmetrics written to " << (dir / "metrics.csv").string() << '\n';
    return 0;
}

int cmd_verify(std::size_t fixtures, std::uint64_t first, const std::string& json_out)
{
    bool ok = true;
    nlohmann::json records = nlohmann::json::array();
    double max_residual = 0.0;
    double max_gbar_rejected = 0.0;
    for (std::size_t i = 0; i < fixtures; ++i)
    {
        const auto f = random_fixture(first + i);
        const auto space = enumerate_fixture(f);
        const auto report = decompose(space);
        for (const auto& r: report.residuals)
            max_residual = std::max(max_residual, r.value);
        if (report.rejection_conditioned.defined)
            max_gbar_rejected = std::max(max_gbar_rejected, std::abs(report.rejection_conditioned.g_bar));
        if (!report.pass())
        {
            ok = false;
            std::cout << "fixture " << first + i << " FAILED\n" << format_report(report);
        }
        auto j = to_json(report);
        j["fixture"] = first + i;
        records.push_back(std::move(j));
    }
    std::cout << fixtures << " fixtures, max residual " << textio::format_double(max_residual)
              << ", max |G_bar| under rejected drafts " << textio::format_double(max_gbar_rejected) << '\n'
              << (ok ? "all identities hold" : "identity failures present") << '\n';
    if (!json_out.empty())
        std::ofstream(json_out) << records.dump(2) << '\n';
    return ok ? 0 : 1;
}

int cmd_ablate(const ExperimentFlags& f)
{
    auto base = load_spec(f);
    const auto root = output_root(f.out_dir) / "ablate";
    std::map<Variant, ExperimentResult> results;
    for (auto v: { Variant::NoRefiner, Variant::NoProcessReward, Variant::ActorRefinerFull,
                   Variant::RejectionSampling })
    {
        auto spec = base;
        spec.variant = v;
        spec.name = std::string(to_string(v));
        results.emplace(v, run_experiment(spec, root / spec.name));
        print_result(results.at(v));
    }
    const auto full = results.at(Variant::ActorRefinerFull).final_em();
    std::size_t failures = 0;
    for (const auto& [v, r]: results)
        failures += r.failures();
    if (failures == 0)
        for (auto v: { Variant::NoRefiner, Variant::RejectionSampling })
        {
            const auto t = sign_test(full, results.at(v).final_em());
            std::cout << "actor_refiner_full vs " << to_string(v) << ": " << t.wins << " wins, " << t.losses
                      << " losses, " << t.ties << " ties, one-sided p = " << textio::format_double(t.p_value)
                      << '\n';
        }
    if (failures == 0)
    {
        auto spec = base;
        spec.variant = Variant::RejectionSampling;
        spec.name = "rejection_sampling_matched";
        const auto matched = run_matched_budget(spec, results.at(Variant::ActorRefinerFull), root / spec.name);
        print_result(matched);
        failures += matched.failures();
        if (matched.failures() == 0)
        {
            const auto t = sign_test(full, matched.final_em());
            std::cout << "actor_refiner_full vs rejection_sampling at matched rollouts: " << t.wins << " wins, "
                      << t.losses << " losses, " << t.ties
                      << " ties, one-sided p = " << textio::format_double(t.p_value) << '\n';
        }
    }
    std::cout << "results under " << root.string() << '\n';
    return failures == 0 ? 0 : 1;
}

int cmd_scan(const ExperimentFlags& f, const std::vector<std::size_t>& values)
{
    const auto spec = load_spec(f);
    const auto root = output_root(f.out_dir) / "scan";
    const auto rows = revision_scan(spec, values, root);
    std::cout << format_scan(rows);
    std::size_t failures = 0;
    for (const auto& r: rows)
        failures += r.failures;
    return failures == 0 ? 0 : 1;
}

int cmd_replay(const std::string& world_path, const std::string& trace_path, std::size_t max_revisions)
{
    std::ifstream win(world_path);
    if (!win)
        throw ConfigError("cannot open world '" + world_path + "'");
    const auto world = load_world(win);
    std::ifstream tin(trace_path);
    if (!tin)
        throw ConfigError("cannot open trace '" + trace_path + "'");
    std::stringstream buf;
    buf << tin.rdbuf();
    const auto trace = parse_trace(buf.str());
    trace.validate(max_revisions);
    for (std::size_t i = 0; i < trace.drafts.size(); ++i)
    {
        trace.drafts[i].validate();
        const auto r = hybrid_reward(trace.drafts[i], world);
        std::cout << "draft " << i << ": outcome " << r.outcome << ", process " << textio::format_double(r.process)
                  << ", total " << textio::format_double(r.total) << '\n';
    }
    const auto r = hybrid_reward(trace.final, world);
    std::cout << "final: " << reward_csv_header() << '\n' << to_csv_row(r) << '\n'
              << "revisions " << trace.revisions_used << ", recorded logprob "
              << textio::format_double(trace.total_logprob()) << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app { "searchlab: actor-refiner search agents on synthetic knowledge worlds" };
    app.require_subcommand(1);

    WorldConfig world_config;
    std::string world_out;
    auto* gen = app.add_subcommand("gen-world", "generate a world and print it");
    add_world_flags(*gen, world_config);
    gen->add_option("-o,--output", world_out, "output file (default stdout)");

    ExperimentFlags train_flags;
    std::string variant;
    std::uint64_t train_seed = 0;
    std::size_t checkpoint_every = 0;
    auto* tr = app.add_subcommand("train", "train one variant on one seed");
    add_experiment_flags(*tr, train_flags);
    tr->add_option("--variant", variant, "no_refiner | no_process_reward | actor_refiner_full | rejection_sampling");
    tr->add_option("--seed", train_seed, "world and training seed");
    tr->add_option("--checkpoint-every", checkpoint_every, "write parameters every K steps");

    std::size_t fixtures = 100;
    std::uint64_t first_fixture = 0;
    std::string json_out;
    auto* ver = app.add_subcommand("verify", "check the mixture, trim and gain identities on random tiny worlds");
    ver->add_option("--fixtures", fixtures, "number of random fixtures");
    ver->add_option("--first", first_fixture, "first fixture seed");
    ver->add_option("--json", json_out, "write per-fixture reports as JSON");

    ExperimentFlags ablate_flags;
    auto* abl = app.add_subcommand("ablate", "run every variant over the configured seeds");
    add_experiment_flags(*abl, ablate_flags);

    ExperimentFlags scan_flags;
    std::vector<std::size_t> scan_values { 1, 2, 3, 4 };
    auto* scan = app.add_subcommand("scan-revisions", "final EM and rollouts against the revision limit");
    add_experiment_flags(*scan, scan_flags);
    scan->add_option("--values", scan_values, "revision limits to scan")->take_all();

    std::string replay_world;
    std::string replay_trace;
    std::size_t replay_revisions = 4;
    auto* rep = app.add_subcommand("replay", "validate and re-score a saved trace");
    rep->add_option("--world", replay_world, "world file from gen-world")->required();
    rep->add_option("--trace", replay_trace, "trace file")->required();
    rep->add_option("--max-revisions", replay_revisions, "revision limit to validate against");

    CLI11_PARSE(app, argc, argv);

    try
    {
        if (*gen)
            return cmd_gen_world(world_config, world_out);
        if (*tr)
            return cmd_train(train_flags, variant, train_seed, checkpoint_every);
        if (*ver)
            return cmd_verify(fixtures, first_fixture, json_out);
        if (*abl)
            return cmd_ablate(ablate_flags);
        if (*scan)
            return cmd_scan(scan_flags, scan_values);
        if (*rep)
            return cmd_replay(replay_world, replay_trace, replay_revisions);
    }
    catch (const ConfigError& e)
    {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    }
    catch (const std::exception& e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
