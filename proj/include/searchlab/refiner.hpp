// SPDX-License-Identifier: Apache-2.0
#pragma once

// The accept-or-repair refiner: a logistic discriminator that gates whole
// trajectories and a softmax trimmer that picks how many actor steps of a
// rejected draft to keep before the actor regenerates the rest.

#include <searchlab/actor.hpp>
#include <searchlab/linalg.hpp>
#include <searchlab/rng.hpp>
#include <searchlab/trajectory.hpp>

#include <optional>
#include <string>
#include <vector>

namespace searchlab
{

namespace disc_feature
{
inline constexpr std::size_t bias = 0;
inline constexpr std::size_t answered = 1;
inline constexpr std::size_t useful_share = 2;
inline constexpr std::size_t redundant_share = 3;
inline constexpr std::size_t budget_share = 4;
inline constexpr std::size_t resolved_answer = 5;
inline constexpr std::size_t progress_share = 6;
inline constexpr std::size_t dim = 7;
} // namespace disc_feature

namespace trim_feature
{
inline constexpr std::size_t position = 0;
inline constexpr std::size_t prefix_progress = 1;
inline constexpr std::size_t prefix_useful = 2;
inline constexpr std::size_t prefix_has_flaw = 3;
inline constexpr std::size_t next_is_flaw = 4;
inline constexpr std::size_t next_is_think = 5;
inline constexpr std::size_t next_is_answer = 6;
inline constexpr std::size_t next_is_repeat = 7;
inline constexpr std::size_t dim = 8;
} // namespace trim_feature

struct RefinerParams
{
    std::vector<double> disc_weights;
    std::vector<double> trim_weights;

    static RefinerParams zeros()
    {
        return { std::vector<double>(disc_feature::dim), std::vector<double>(trim_feature::dim) };
    }

    bool operator==(const RefinerParams&) const = default;
};

enum class AcceptMode
{
    /// accept with probability pi_d; the decision is a sampled, trainable action
    Bernoulli,
    /// accept iff pi_d >= tau; deterministic, carries no gradient
    Threshold,
};

enum class TrimMode
{
    Learned,
    /// always cut at 0: a rejected draft is regenerated from scratch
    FullRegeneration,
};

std::string_view to_string(AcceptMode mode);
std::string_view to_string(TrimMode mode);
AcceptMode parse_accept_mode(std::string_view text);
TrimMode parse_trim_mode(std::string_view text);

struct RefineConfig
{
    std::size_t budget = 4;
    std::size_t max_revisions = 1;
    double tau = 0.5;
    AcceptMode mode = AcceptMode::Bernoulli;
    TrimMode trim_mode = TrimMode::Learned;

    void validate() const;
};

std::vector<double> discriminator_features(const KnowledgeWorld& world, const Trajectory& t, std::size_t budget);

/// sigmoid(disc_weights . phi(t)), always in [0, 1].
double discriminate(const RefinerParams& params, const KnowledgeWorld& world, const Trajectory& t,
                    std::size_t budget);

struct AcceptDecision
{
    bool accepted = false;
    double probability = 0.5;
    double logprob = 0.0;
    bool sampled = false;
};

AcceptDecision accept(const RefinerParams& params, const KnowledgeWorld& world, const Trajectory& t,
                      const RefineConfig& config, Rng& rng);

/// One feature row per cut k in [0, T), T the actor-step count of `t`.
FeatureMatrix trim_features(const KnowledgeWorld& world, const Trajectory& t, std::size_t budget);

/// pi_h(k | t) for k in [0, T).
std::vector<double> trim_distribution(const RefinerParams& params, const KnowledgeWorld& world,
                                      const Trajectory& t, std::size_t budget);

struct CutDecision
{
    std::size_t cut = 0;
    double logprob = 0.0;
    bool sampled = false;
};

/// Requires at least one actor step.
CutDecision trim(const RefinerParams& params, const KnowledgeWorld& world, const Trajectory& t,
                 const RefineConfig& config, Rng& rng);

enum class MetaKind
{
    Accept,
    Reject,
    Cut,
};

struct MetaAction
{
    MetaKind kind = MetaKind::Accept;
    std::size_t cut = 0;
    double logprob = 0.0;
    /// false for deterministic decisions (threshold gate, forced cut)
    bool sampled = true;

    bool operator==(const MetaAction&) const = default;
};

struct AugmentedTrace
{
    Trajectory final;
    /// every draft in generation order; drafts.back() == final
    std::vector<Trajectory> drafts;
    std::vector<MetaAction> meta;
    std::size_t revisions_used = 0;
    AcceptMode mode = AcceptMode::Bernoulli;
    /// pi_d of the final draft when the revision budget ran out; not a sampled action
    std::optional<double> final_verdict;

    /// Sum of every sampled actor and meta log-probability in the trace.
    [[nodiscard]] double total_logprob() const;
    /// Throws StructuralError if the meta sequence or prefix sharing is broken.
    void validate(std::size_t max_revisions) const;

    bool operator==(const AugmentedTrace&) const = default;
};

AugmentedTrace refine_loop(const ActorParams& actor, const RefinerParams& refiner, const KnowledgeWorld& world,
                           QuestionId question, const RefineConfig& config, Rng& rng);

/// Tagged-text dump: each draft as a trajectory record, meta-actions as
/// `# meta ...` comment lines between them.
std::string serialize_trace(const AugmentedTrace& trace);
AugmentedTrace parse_trace(std::string_view text);

} // namespace searchlab
