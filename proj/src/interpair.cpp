#include "cnoma/interpair.hpp"

#include <cmath>

namespace cnoma {

double StagePlan::success_probability() const {
    double exponent = 0.0;
    for (std::size_t i = 0; i < pair_psis.size(); ++i) {
        if (pair_psis[i] > 0.0) {
            exponent += pair_psis[i] / budgets[i];
        }
    }
    return std::exp(-exponent);
}

std::vector<double> allocate_budgets(std::span<const double> psis, double p_max) {
    if (!(p_max > 0.0)) {
        throw InvalidParameter("p_max must be positive");
    }
    double total = 0.0;
    for (double psi : psis) {
        if (!(psi >= 0.0) || !std::isfinite(psi)) {
            throw InvalidParameter("pair exponents must be nonnegative and finite");
        }
        total += std::sqrt(psi);
    }
    std::vector<double> budgets(psis.size(), 0.0);
    if (total == 0.0) {
        return budgets;
    }
    for (std::size_t i = 0; i < psis.size(); ++i) {
        budgets[i] = std::sqrt(psis[i]) / total * p_max;
    }
    return budgets;
}

Pairing default_pairing(std::size_t users) {
    if (users % 2 != 0) {
        throw InvalidParameter("pairing needs an even number of users, got " + std::to_string(users) +
                               "; use the OMA planner for odd K");
    }
    Pairing p;
    for (UserIndex i = 0; i + 1 < users; i += 2) {
        p.emplace_back(i, i + 1);
    }
    return p;
}

Method1Plan plan_method1(const SystemScenario& scenario, const Pairing& pairing) {
    scenario.validate();
    const std::size_t k = scenario.user_count();
    if (k % 2 != 0) {
        throw InvalidParameter("Method 1 needs an even number of users, got " + std::to_string(k));
    }
    if (pairing.size() * 2 != k) {
        throw InvalidParameter("pairing must cover every user exactly once");
    }
    std::vector<int> seen(k, 0);
    for (const auto& [i, j] : pairing) {
        if (i >= k || j >= k || i == j) {
            throw InvalidParameter("pairing references invalid users");
        }
        ++seen[i];
        ++seen[j];
    }
    for (int s : seen) {
        if (s != 1) {
            throw InvalidParameter("pairing must be a perfect matching");
        }
    }

    const std::size_t w = pairing.size();
    Method1Plan plan;
    plan.stage.subchannels = w;
    plan.allocation.alphas.assign(k, 0.0);
    plan.allocation.subchannel_count = w;
    for (const auto& [i, j] : pairing) {
        const PairParams params = pair_params(scenario, i, j, w);
        const PairCase pc = classify_pair(scenario.users[i], scenario.users[j], params);
        PairSolution sol = solve_pair(pc, params);
        double a = sol.alpha_star;
        double b = pc.tag == PairTag::T1 || pc.tag == PairTag::T3 ? 0.0 : 1.0 - a;
        if (a == b && a > 0.0) {
            // Exactly 1/2: keep the decode order the closed form assumed.
            const double nudge = sol.decoded_first == 0 ? 1e-9 : -1e-9;
            a += nudge;
            b -= nudge;
        }
        plan.allocation.alphas[i] = a;
        plan.allocation.alphas[j] = b;
        plan.allocation.groups.push_back({i, j});
        plan.stage.pair_psis.push_back(sol.psi_star);
        plan.pairs.push_back(sol);
    }
    plan.stage.budgets = allocate_budgets(plan.stage.pair_psis, scenario.p_max);
    plan.allocation.pair_budgets = plan.stage.budgets;
    return plan;
}

Method1Plan plan_method1(const SystemScenario& scenario) {
    return plan_method1(scenario, default_pairing(scenario.user_count()));
}

Method1Plan plan_oma(const SystemScenario& scenario) {
    scenario.validate();
    const std::size_t k = scenario.user_count();
    Method1Plan plan;
    plan.stage.subchannels = k;
    plan.allocation.alphas.assign(k, 0.0);
    plan.allocation.subchannel_count = k;
    const double w = static_cast<double>(k);
    for (UserIndex i = 0; i < k; ++i) {
        plan.allocation.groups.push_back({i});
        const auto& u = scenario.users[i];
        if (u.self_cached()) {
            plan.stage.pair_psis.push_back(0.0);
            continue;
        }
        plan.allocation.alphas[i] = 1.0;
        const double eps = adjust_threshold(scenario.request_threshold(i), k);
        plan.stage.pair_psis.push_back(u.lambda * eps * scenario.beta(i) / w);
    }
    plan.stage.budgets = allocate_budgets(plan.stage.pair_psis, scenario.p_max);
    plan.allocation.pair_budgets = plan.stage.budgets;
    return plan;
}

} // namespace cnoma
