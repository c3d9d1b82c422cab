// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reasoning trajectories as typed step sequences.
//
// Actor-emitted steps (think, search, answer) carry the log-probability the
// actor assigned them; information steps are emitted by the environment and
// always follow a search step directly.

#include <searchlab/synthenv.hpp>

#include <json.hpp>

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace searchlab
{

enum class StepKind
{
    Think,
    Search,
    Information,
    Answer,
};

std::string_view to_string(StepKind kind);

struct ThinkPayload
{
    std::uint32_t token = 0;
    bool operator==(const ThinkPayload&) const = default;
};

struct AnswerPayload
{
    EntityId entity = 0;
    bool operator==(const AnswerPayload&) const = default;
};

using StepPayload = std::variant<ThinkPayload, Query, QueryResult, AnswerPayload>;

struct Step
{
    StepPayload payload;
    std::optional<double> actor_logprob;

    static Step think(std::uint32_t token, double logprob) { return { ThinkPayload { token }, logprob }; }
    static Step search(Query q, double logprob) { return { q, logprob }; }
    static Step information(QueryResult r) { return { std::move(r), std::nullopt }; }
    static Step answer(EntityId e, double logprob) { return { AnswerPayload { e }, logprob }; }

    [[nodiscard]] StepKind kind() const noexcept { return static_cast<StepKind>(payload.index()); }
    [[nodiscard]] bool is_actor() const noexcept { return kind() != StepKind::Information; }

    bool operator==(const Step&) const = default;
};

class Trajectory
{
  public:
    Trajectory() = default;
    explicit Trajectory(QuestionId question, std::vector<Step> steps = {}):
        _question(question), _steps(std::move(steps))
    {
    }

    [[nodiscard]] QuestionId question_id() const noexcept { return _question; }
    [[nodiscard]] const std::vector<Step>& steps() const noexcept { return _steps; }

    /// Number of search steps.
    [[nodiscard]] std::size_t turn_count() const;
    [[nodiscard]] std::size_t actor_step_count() const;
    /// Think and search steps; each consumes one unit of the turn budget.
    [[nodiscard]] std::size_t budget_used() const;
    [[nodiscard]] std::optional<EntityId> answer() const;
    [[nodiscard]] bool is_terminal() const;
    [[nodiscard]] std::vector<QueryResult> query_results() const;
    [[nodiscard]] std::vector<Query> queries() const;
    /// Index into steps() of the i-th actor step.
    [[nodiscard]] std::size_t actor_step_index(std::size_t i) const;
    [[nodiscard]] double total_logprob() const;

    /// Throws StructuralError on a broken search/information pairing, a
    /// non-terminal answer, or (when budget > 0) exceeding the turn budget.
    void validate(std::size_t budget = 0) const;

    void push_back(Step step) { _steps.push_back(std::move(step)); }

    bool operator==(const Trajectory&) const = default;

  private:
    QuestionId _question = 0;
    std::vector<Step> _steps;
};

/// The first `cut` actor steps of a trajectory plus their information steps.
struct Prefix
{
    Trajectory trajectory;
    std::size_t cut = 0;
};

/// Throws std::out_of_range unless 0 <= k <= t.actor_step_count().
Prefix take_prefix(const Trajectory& t, std::size_t k);

/// Appends a suffix generated from `prefix`; throws StructuralError if the
/// joined sequence breaks any trajectory invariant.
Trajectory concat(const Prefix& prefix, std::span<const Step> suffix);

/// Tagged text with one tag pair per line:
///   <trajectory question=3>
///   <think>2</think> lp=-1.09
///   <search>4 1</search> lp=-2.3
///   <information>#7 4 1 9 * | #0 -</information>
///   <answer>9</answer> lp=-0.5
///   </trajectory>
/// A trailing `*` marks gold-chain chunks; `#0 -` is an empty chunk.
std::string serialize(const Trajectory& t);
Trajectory parse_trajectory(std::string_view text);

void to_json(nlohmann::json& j, const Trajectory& t);
void from_json(const nlohmann::json& j, Trajectory& t);

} // namespace searchlab
