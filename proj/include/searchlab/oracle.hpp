// SPDX-License-Identifier: Apache-2.0
#pragma once

// Exact enumeration of a question's trajectory space on tiny worlds, the
// refiner's mixture density over it, and the accept/trim gain identities
// checked as finite sums.

#include <searchlab/actor.hpp>
#include <searchlab/refiner.hpp>

#include <json.hpp>

#include <string>
#include <unordered_map>
#include <vector>

namespace searchlab
{

inline constexpr std::size_t default_enumeration_bound = 100000;

/// A prefix in the enumeration tree. Nodes are stored in preorder, so a
/// subtree is the contiguous range [index, subtree_end) and its leaves are
/// [leaf_begin, leaf_end).
struct EnumNode
{
    std::size_t parent = 0;
    /// actor steps taken to reach this node
    std::size_t depth = 0;
    /// pi_l of the prefix
    double probability = 1.0;
    /// expected reward of completing this prefix under pi_l
    double value = 0.0;
    std::size_t subtree_end = 0;
    std::size_t leaf_begin = 0;
    std::size_t leaf_end = 0;
};

struct EnumeratedSpace
{
    QuestionId question = 0;
    std::size_t budget = 0;
    std::vector<EnumNode> nodes;

    // Per complete trajectory, in preorder.
    std::vector<Trajectory> trajectories;
    std::vector<double> probability;
    std::vector<double> reward;
    /// path[y][k] is the node reached after k actor steps, k in [0, T]
    std::vector<std::vector<std::size_t>> path;
    /// acceptance probability alpha(y)
    std::vector<double> alpha;
    /// trimmer law pi_h(k | y), k in [0, T)
    std::vector<std::vector<double>> trim;

    [[nodiscard]] std::size_t size() const noexcept { return trajectories.size(); }
    [[nodiscard]] std::size_t length(std::size_t y) const noexcept { return path[y].size() - 1; }
    /// V(y_{1:k})
    [[nodiscard]] double value_at(std::size_t y, std::size_t k) const { return nodes[path[y][k]].value; }
    /// G_k(y) = V(y_{1:k}) - R(y)
    [[nodiscard]] double gain_at(std::size_t y, std::size_t k) const { return value_at(y, k) - reward[y]; }
    /// Index of the trajectory with the same actor actions, or size().
    [[nodiscard]] std::size_t find(const Trajectory& t) const;

    /// action-sequence key to trajectory index
    std::unordered_map<std::string, std::size_t> index;
};

/// Depth-first expansion of every action sequence under `budget`. Rewards are
/// hybrid totals. The refiner fields start at alpha = 1 and pi_h = delta_0.
/// Throws CapacityError once more than `bound` trajectories are reached.
EnumeratedSpace enumerate(const ActorParams& params, const KnowledgeWorld& world, QuestionId question,
                          std::size_t budget, std::size_t bound = default_enumeration_bound);

/// Fills alpha and pi_h from a parametric refiner. Threshold mode gives
/// alpha in {0, 1}; full regeneration puts all trim mass on k = 0.
void attach_refiner(EnumeratedSpace& space, const RefinerParams& params, const KnowledgeWorld& world,
                    const RefineConfig& config);

/// alpha(y) = 1 iff R(y) is the maximum reward in the space.
std::vector<double> oracle_alpha(const EnumeratedSpace& space);
/// All mass on argmax_k G_k(y), lowest k on ties.
std::vector<std::vector<double>> oracle_trim(const EnumeratedSpace& space);
std::vector<std::vector<double>> uniform_trim(const EnumeratedSpace& space);

/// Exact law of the refine loop's final trajectory for `max_revisions` rounds.
std::vector<double> mixture_density(const EnumeratedSpace& space, std::size_t max_revisions);

/// One repair round applied to a draft law p: sum_y' p(y')(1 - alpha(y')) T'(y | y').
std::vector<double> repair_density(const EnumeratedSpace& space, std::span<const double> p);

/// Probability of a whole augmented trace under the enumerated model.
/// Throws EvaluationError when a draft is outside the space.
double trace_probability(const EnumeratedSpace& space, const AugmentedTrace& trace);

double expectation(std::span<const double> weights, std::span<const double> x);
/// E[XY] - E[X]E[Y] under `weights`.
double covariance(std::span<const double> weights, std::span<const double> x, std::span<const double> y);
/// sum w (x - E x)(y - E y)
double covariance_two_pass(std::span<const double> weights, std::span<const double> x, std::span<const double> y);

/// J_trim(y) = sum_k pi_h(k | y) V(y_{1:k})
std::vector<double> trim_values(const EnumeratedSpace& space);

struct MixtureDecomposition
{
    double j_base = 0.0;
    double j_meta_direct = 0.0;
    double j_meta_decomposed = 0.0;
    double a_prec = 0.0;
    double z_acc = 0.0;
    double v_inter = 0.0;
    double j_trim_bar = 0.0;
    double residual = 0.0;
    /// |E[XY] - E[X]E[Y] - two-pass| for the A_prec covariance
    double covariance_residual = 0.0;
};

MixtureDecomposition verify_mixture_decomposition(const EnumeratedSpace& space);

enum class DraftDistribution
{
    Unconditional,
    RejectionConditioned,
};

std::string_view to_string(DraftDistribution d);

struct TrimDecomposition
{
    DraftDistribution distribution = DraftDistribution::Unconditional;
    /// false when no draft is ever rejected (conditioned law undefined)
    bool defined = true;
    double delta_direct = 0.0;
    double s_trim = 0.0;
    double g_bar = 0.0;
    double residual = 0.0;
};

/// pi_h and G_k are zero-extended to the longest trajectory.
TrimDecomposition verify_trim_decomposition(const EnumeratedSpace& space, DraftDistribution distribution);

struct GainDecomposition
{
    double delta_direct = 0.0;
    double a_prec = 0.0;
    double v_inter = 0.0;
    double s_trim = 0.0;
    double g_bar = 0.0;
    double delta_decomposed = 0.0;
    double residual = 0.0;
};

GainDecomposition verify_gain_decomposition(const EnumeratedSpace& space);

struct Residual
{
    std::string name;
    double value = 0.0;
    double tolerance = 0.0;

    [[nodiscard]] bool pass() const noexcept { return value < tolerance; }
};

struct DecompositionReport
{
    std::size_t trajectories = 0;
    double j_base = 0.0;
    double j_meta_direct = 0.0;
    double j_meta_decomposed = 0.0;
    double a_prec = 0.0;
    double v_inter = 0.0;
    double s_trim = 0.0;
    double g_bar = 0.0;
    double z_acc = 0.0;
    double j_trim_bar = 0.0;
    TrimDecomposition rejection_conditioned;
    std::vector<Residual> residuals;

    [[nodiscard]] bool pass() const;
};

/// Every identity at one revision, plus normalization of q for 1..3 rounds.
DecompositionReport decompose(const EnumeratedSpace& space, double tolerance = 1e-9,
                              double normalization_tolerance = 1e-10);

/// A tiny random world with random actor and refiner weights.
struct OracleFixture
{
    KnowledgeWorld world;
    ActorParams actor;
    RefinerParams refiner;
    RefineConfig refine;
    QuestionId question = 0;
};

OracleFixture random_fixture(std::uint64_t seed, double weight_scale = 1.0);

/// Enumerates the fixture's question and attaches its refiner.
EnumeratedSpace enumerate_fixture(const OracleFixture& f, std::size_t bound = default_enumeration_bound);

std::string format_report(const DecompositionReport& report);
nlohmann::json to_json(const DecompositionReport& report);

} // namespace searchlab
