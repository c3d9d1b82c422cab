// SPDX-License-Identifier: Apache-2.0
#pragma once

// Group-relative policy optimization over augmented traces.
//
// A trace is credited through the actor steps of its final trajectory and
// every sampled verdict and cut that led to it; each is one term of the
// clipped surrogate. Actor, discriminator and trimmer weights share one
// flat vector.

#include <searchlab/actor.hpp>
#include <searchlab/refiner.hpp>
#include <searchlab/reward.hpp>

#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace searchlab
{

struct ParamLayout
{
    std::size_t actor_offset = 0;
    std::size_t actor_dim = 0;
    std::size_t disc_offset = 0;
    std::size_t disc_dim = 0;
    std::size_t trim_offset = 0;
    std::size_t trim_dim = 0;

    static ParamLayout of(const WorldConfig& config);
    [[nodiscard]] std::size_t size() const noexcept { return trim_offset + trim_dim; }
};

struct JointParams
{
    ActorParams actor;
    RefinerParams refiner;

    static JointParams zeros(const WorldConfig& config);
    [[nodiscard]] std::vector<double> flatten() const;
    static JointParams unflatten(std::span<const double> theta, const ParamLayout& layout);

    bool operator==(const JointParams&) const = default;
};

enum class DecisionKind
{
    Actor,
    Discriminator,
    Trimmer,
};

/// A sampled decision frozen as the option features it was drawn from.
/// Discriminator decisions hold one row; `chosen` is 1 for accept, 0 for reject.
struct Decision
{
    DecisionKind kind = DecisionKind::Actor;
    FeatureMatrix features;
    std::size_t chosen = 0;
};

double decision_logprob(const Decision& d, std::span<const double> theta, const ParamLayout& layout);

/// grad += scale * d/dtheta log pi(decision)
void accumulate_logprob_grad(const Decision& d, std::span<const double> theta, const ParamLayout& layout,
                             double scale, std::span<double> grad);

/// Decisions of `from..end` actor steps of `t`, replayed from the start.
std::vector<Decision> actor_decisions(const KnowledgeWorld& world, const Trajectory& t, std::size_t budget,
                                      std::size_t from = 0);

/// Actor steps of the final trajectory, then the sampled meta-actions in order.
std::vector<Decision> trace_decisions(const KnowledgeWorld& world, const AugmentedTrace& trace,
                                      const RefineConfig& config);

struct TrainConfig
{
    std::size_t group_size = 5;
    double clip_epsilon = 0.2;
    double kl_beta = 0.001;
    double learning_rate = 2.0;
    std::size_t steps = 300;
    std::size_t prompts_per_step = 16;
    RefineConfig refine;
    bool process_reward = true;
    std::uint64_t seed = 0;
    /// abort when mean |theta| exceeds this
    double divergence_bound = 1e3;
    bool freeze_actor = false;
    bool freeze_refiner = false;
    /// stop after the step that brings total rollouts to this many; 0 = off
    std::size_t rollout_budget = 0;

    void validate() const;
    /// Flat `key=value` view, also the config-file format.
    [[nodiscard]] std::map<std::string, std::string> to_map() const;
    void set(std::string_view key, std::string_view value);
};

struct GroupBatch
{
    QuestionId question_id = 0;
    std::vector<AugmentedTrace> traces;
    std::vector<RewardBreakdown> rewards;
    /// the reward optimized: hybrid total, or the bare outcome when the
    /// process term is switched off
    std::vector<double> train_rewards;
    std::vector<double> advantages;
    std::vector<std::vector<Decision>> decisions;
};

/// (R - mean) / (std + 1e-8) with the population std; zeros when all rewards
/// are equal. Throws PreconditionError for fewer than two rewards.
std::vector<double> group_advantages(std::span<const double> rewards);

GroupBatch sample_group(const JointParams& params, const KnowledgeWorld& world, QuestionId question,
                        const TrainConfig& config, Rng& rng);

struct LossResult
{
    double loss = 0.0;
    std::vector<double> grad;
    /// mean k3 estimate over decisions
    double mean_kl = 0.0;
    std::size_t decisions = 0;
    double clip_fraction = 0.0;
};

/// Negated clipped-surrogate objective with a per-decision k3 penalty toward
/// theta_ref, averaged per trace (1/L_i), per group (1/G) and over groups.
LossResult loss_and_grad(std::span<const double> theta, std::span<const double> theta_old,
                         std::span<const GroupBatch> batches, std::span<const double> theta_ref,
                         const TrainConfig& config, const ParamLayout& layout);

struct StepMetrics
{
    std::size_t step = 0;
    double mean_em = 0.0;
    double mean_reward = 0.0;
    double reject_rate = 0.0;
    double mean_revisions = 0.0;
    double grad_norm = 0.0;
    double kl = 0.0;
    std::size_t initial_rollouts = 0;
    std::size_t refined_rollouts = 0;
    std::size_t total_rollouts = 0;
};

std::string metrics_csv_header();
std::string to_csv_row(const StepMetrics& m);

struct TrainResult
{
    std::vector<StepMetrics> curve;
    JointParams final_params;
};

using StepCallback = std::function<void(const StepMetrics&, const JointParams&)>;

/// Deterministic in config.seed. Runs `steps` steps, or fewer when the
/// rollout budget is reached first. theta_old is the current snapshot at each
/// step (one update per sampled batch); theta_ref is the initialization.
TrainResult train(const TrainConfig& config, const KnowledgeWorld& world, const StepCallback& on_step = {});

struct EvalResult
{
    double mean_em = 0.0;
    double mean_reward = 0.0;
    double mean_revisions = 0.0;
    std::size_t total_rollouts = 0;
};

/// Runs the refine loop `samples` times per question with a seeded stream.
EvalResult evaluate(const JointParams& params, const KnowledgeWorld& world, const RefineConfig& config,
                    std::size_t samples, std::uint64_t seed);

} // namespace searchlab
