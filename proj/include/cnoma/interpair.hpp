#pragma once

#include <utility>
#include <vector>

#include "cnoma/core_model.hpp"
#include "cnoma/pairwise.hpp"

namespace cnoma {

struct StagePlan {
    std::vector<double> pair_psis;
    std::vector<double> budgets;
    std::size_t subchannels = 1;

    /// exp(-sum psi_i / P_i) over pairs that need power.
    double success_probability() const;
};

/// P_i = sqrt(psi_i) / sum_j sqrt(psi_j) * p_max over the positive psi_i;
/// zero-psi entries get no power, and all-zero input yields all-zero budgets.
std::vector<double> allocate_budgets(std::span<const double> psis, double p_max);

using Pairing = std::vector<std::pair<UserIndex, UserIndex>>;

/// (0,1), (2,3), ... Rejects odd user counts.
Pairing default_pairing(std::size_t users);

struct Method1Plan {
    StagePlan stage;
    PowerAllocation allocation;
    std::vector<PairSolution> pairs;
};

/// Two-stage divide-and-conquer allocation: every pair gets 1/(K/2) of the
/// band and a closed-form intra-pair split, then budgets follow the
/// square-root rule.
Method1Plan plan_method1(const SystemScenario& scenario, const Pairing& pairing);
Method1Plan plan_method1(const SystemScenario& scenario);

/// Orthogonal baseline: K subchannels, one user each, budgets by the
/// square-root rule with psi_i = lambda_i * eps_i * beta_i (scaled for W = K).
Method1Plan plan_oma(const SystemScenario& scenario);

} // namespace cnoma
