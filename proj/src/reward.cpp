// SPDX-License-Identifier: Apache-2.0
#include <searchlab/reward.hpp>
#include <searchlab/textio.hpp>

#include <numeric>

namespace searchlab
{

int outcome_reward(const Trajectory& t, const KnowledgeWorld& world)
{
    const auto answer = t.answer();
    return answer && *answer == world.question(t.question_id()).answer ? 1 : 0;
}

namespace
{

std::vector<int> utilities_of(const Trajectory& t, const KnowledgeWorld& world)
{
    const auto results = t.query_results();
    return chunk_utility(world, t.question_id(), results);
}

double density(const std::vector<int>& u)
{
    if (u.empty())
        return 0.0;
    return double(std::accumulate(u.begin(), u.end(), 0)) / double(u.size());
}

} // namespace

double process_reward(const Trajectory& t, const KnowledgeWorld& world)
{
    return density(utilities_of(t, world));
}

RewardBreakdown hybrid_reward(const Trajectory& t, const KnowledgeWorld& world)
{
    RewardBreakdown r;
    r.utilities = utilities_of(t, world);
    r.num_queries = r.utilities.size();
    r.outcome = outcome_reward(t, world);
    r.process = density(r.utilities);
    r.total = r.outcome == 1 ? 1.0 + r.process : 0.0;
    return r;
}

std::string reward_csv_header()
{
    return "outcome,process,total,M";
}

std::string to_csv_row(const RewardBreakdown& r)
{
    return std::to_string(r.outcome) + ',' + textio::format_double(r.process) + ','
         + textio::format_double(r.total) + ',' + std::to_string(r.num_queries);
}

} // namespace searchlab
