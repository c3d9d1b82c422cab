// SPDX-License-Identifier: Apache-2.0
#pragma once

// Outcome-gated hybrid reward: exact match times (1 + useful-search density).

#include <searchlab/synthenv.hpp>
#include <searchlab/trajectory.hpp>

#include <iosfwd>
#include <vector>

namespace searchlab
{

struct RewardBreakdown
{
    int outcome = 0;
    double process = 0.0;
    double total = 0.0;
    std::size_t num_queries = 0;
    std::vector<int> utilities;

    bool operator==(const RewardBreakdown&) const = default;
};

/// 1 iff the trajectory answers with the gold entity.
int outcome_reward(const Trajectory& t, const KnowledgeWorld& world);

/// Mean utility over the trajectory's searches; 0 when it never searched.
double process_reward(const Trajectory& t, const KnowledgeWorld& world);

RewardBreakdown hybrid_reward(const Trajectory& t, const KnowledgeWorld& world);

/// CSV row `outcome,process,total,M` (no trailing newline).
std::string reward_csv_header();
std::string to_csv_row(const RewardBreakdown& r);

} // namespace searchlab
