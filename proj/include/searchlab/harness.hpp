// SPDX-License-Identifier: Apache-2.0
#pragma once

// Experiment runner: variants of the training recipe, per-seed runs with
// CSV metrics, paired sign tests and the max-revision scan.

#include <searchlab/grpo.hpp>

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace searchlab
{

/// Ablation ladder, each rung toggling one mechanism of its predecessor:
/// no_refiner -> no_process_reward -> actor_refiner_full -> rejection_sampling.
enum class Variant
{
    NoRefiner,
    NoProcessReward,
    ActorRefinerFull,
    RejectionSampling,
};

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view text);
std::optional<Variant> predecessor(Variant v);

struct Mechanisms
{
    bool refiner = false;
    bool process_reward = false;
    bool learned_trim = false;

    bool operator==(const Mechanisms&) const = default;
};

Mechanisms mechanisms(Variant v);

/// The base config with the variant's mechanisms switched on or off.
TrainConfig apply_variant(TrainConfig base, Variant v);

/// `# key=value` lines describing everything that determines a run.
std::string effective_config_header(const TrainConfig& train, const WorldConfig& world, Variant v);

struct ExperimentSpec
{
    std::string name = "experiment";
    Variant variant = Variant::ActorRefinerFull;
    TrainConfig train;
    /// the world seed of each run is the run seed
    WorldConfig world;
    std::vector<std::uint64_t> seeds { 0 };
    /// refine-loop samples per question when scoring the final parameters
    std::size_t eval_samples = 200;
    /// acceptance gate used when scoring
    AcceptMode eval_mode = AcceptMode::Threshold;

    void validate() const;
    void set(std::string_view key, std::string_view value);
};

/// `key=value` lines; `#` starts a comment. Unknown keys raise ConfigError,
/// malformed lines raise ParseError.
ExperimentSpec parse_experiment(std::istream& in, ExperimentSpec base = {});

struct SeedResult
{
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double final_em = 0.0;
    double final_reward = 0.0;
    double final_revisions = 0.0;
    std::size_t train_rollouts = 0;
    std::size_t train_refined_rollouts = 0;
    /// refined share of rollouts over the first and last tenth of training
    double early_refined_share = 0.0;
    double late_refined_share = 0.0;
    std::vector<StepMetrics> curve;
    JointParams params;
};

struct Stat
{
    double mean = 0.0;
    double stddev = 0.0;
};

Stat summarize(std::span<const double> values);

struct ExperimentResult
{
    ExperimentSpec spec;
    std::vector<SeedResult> runs;

    [[nodiscard]] std::vector<double> final_em() const;
    [[nodiscard]] Stat em() const;
    [[nodiscard]] Stat reward() const;
    [[nodiscard]] Stat revisions() const;
    [[nodiscard]] double mean_train_rollouts() const;
    [[nodiscard]] std::size_t failures() const;
};

/// One training run plus scoring for a single seed. Errors are caught and
/// returned as a failed row.
SeedResult run_seed(const ExperimentSpec& spec, std::uint64_t seed);

/// Runs every seed. With an output directory, writes `seed_<s>.csv` per run,
/// `summary.csv` and a `timing.csv` of wall-clock seconds.
ExperimentResult run_experiment(const ExperimentSpec& spec,
                                const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Runs `spec` on the seeds of `reference`, each with a rollout budget equal
/// to what the reference run used on that seed. `steps` is raised by
/// `step_headroom` so the budget, not the step count, ends training.
ExperimentResult run_matched_budget(const ExperimentSpec& spec, const ExperimentResult& reference,
                                    const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                                    std::size_t step_headroom = 4);

std::string summary_csv(const ExperimentResult& result);

struct SignTest
{
    std::size_t wins = 0;
    std::size_t losses = 0;
    std::size_t ties = 0;
    /// P(at least `wins` of wins+losses fair coin flips)
    double p_value = 1.0;
};

/// One-sided paired sign test of a > b; ties are dropped.
SignTest sign_test(std::span<const double> a, std::span<const double> b);

struct ScanRow
{
    std::size_t max_revisions = 0;
    Stat em;
    Stat revisions;
    double initial_rollouts = 0.0;
    double refined_rollouts = 0.0;
    double total_rollouts = 0.0;
    double early_refined_share = 0.0;
    double late_refined_share = 0.0;
    std::size_t failures = 0;
};

/// One experiment per N_max value; the N_max = 0 row runs the no_refiner variant.
std::vector<ScanRow> revision_scan(const ExperimentSpec& base, std::span<const std::size_t> max_revisions,
                                   const std::optional<std::filesystem::path>& out_dir = std::nullopt);

std::string format_scan(std::span<const ScanRow> rows);

} // namespace searchlab
