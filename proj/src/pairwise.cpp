#include "cnoma/pairwise.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cnoma {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Positive-denominator reciprocal term c / d; +inf once d leaves (0, inf).
double term(double c, double d) { return d > 0.0 ? c / d : kInf; }

} // namespace

std::string_view to_string(PairTag tag) {
    switch (tag) {
    case PairTag::T1: return "T1";
    case PairTag::T2: return "T2";
    case PairTag::T3: return "T3";
    case PairTag::C1: return "C1";
    case PairTag::C2: return "C2";
    case PairTag::C3: return "C3";
    case PairTag::C4: return "C4";
    }
    return "?";
}

void PairParams::validate() const {
    for (double v : {lambda1, lambda2, eps1, eps2, beta1, beta2}) {
        if (!(v > 0.0) || !std::isfinite(v)) {
            throw InvalidParameter("pair parameters must be positive and finite");
        }
    }
}

PairParams pair_params(const SystemScenario& scenario, UserIndex i, UserIndex j,
                       std::size_t subchannels) {
    const double w = static_cast<double>(subchannels);
    return PairParams{scenario.users.at(i).lambda,
                      scenario.users.at(j).lambda,
                      adjust_threshold(scenario.request_threshold(i), subchannels),
                      adjust_threshold(scenario.request_threshold(j), subchannels),
                      scenario.beta(i) / w,
                      scenario.beta(j) / w};
}

PairCase classify_pair(const UserProfile& u1, const UserProfile& u2, const PairParams& params) {
    PairCase pc;
    const bool self1 = u1.self_cached();
    const bool self2 = u2.self_cached();
    if (self1 && self2) {
        pc.tag = PairTag::T1;
        return pc;
    }
    if (self1 || self2) {
        pc.tag = PairTag::T2;
        pc.uncached_user = self1 ? 1 : 0;
        return pc;
    }
    if (u1.request == u2.request) {
        pc.tag = PairTag::T3;
        return pc;
    }
    pc.swapped = params.zeta() < 1.0;
    const UserProfile& first = pc.swapped ? u2 : u1;
    const UserProfile& second = pc.swapped ? u1 : u2;
    const bool first_holds_other = first.has_cached(second.request);
    const bool second_holds_other = second.has_cached(first.request);
    if (first_holds_other && second_holds_other) {
        pc.tag = PairTag::C3;
    } else if (first_holds_other) {
        pc.tag = PairTag::C1;
    } else if (second_holds_other) {
        pc.tag = PairTag::C2;
    } else {
        pc.tag = PairTag::C4;
    }
    return pc;
}

double case_exponent(PairTag tag, PairBranch branch, const PairParams& p, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
        return kInf;
    }
    const double a = p.weight1();
    const double b = p.weight2();
    // Denominators shared by several cases: user 2 (or 1) decoding f1 under
    // f2's interference, and f2 decoded under f1's interference.
    const double d_first = (1.0 + p.eps1) * alpha - p.eps1;
    const double d_second = 1.0 - (1.0 + p.eps2) * alpha;
    if (tag == PairTag::C3) {
        return a / alpha + b / (1.0 - alpha);
    }
    if (branch == PairBranch::High && alpha < 0.5) {
        return kInf;
    }
    if (branch == PairBranch::Low && alpha > 0.5) {
        return kInf;
    }
    switch (tag) {
    case PairTag::C1:
        if (branch == PairBranch::High) {
            return a / alpha + std::max(b / (1.0 - alpha), term(p.lambda2 * p.eps1 * p.beta2, d_first));
        }
        return a / alpha + term(b, d_second);
    case PairTag::C2:
        if (branch == PairBranch::High) {
            return term(a, d_first) + b / (1.0 - alpha);
        }
        return std::max(term(p.lambda1 * p.eps2 * p.beta1, d_second), a / alpha) + b / (1.0 - alpha);
    case PairTag::C4:
        if (branch == PairBranch::High) {
            return term(a, d_first) + std::max(term(p.lambda2 * p.eps1 * p.beta2, d_first), b / (1.0 - alpha));
        }
        return std::max(term(p.lambda1 * p.eps2 * p.beta1, d_second), a / alpha) + term(b, d_second);
    default:
        throw InvalidParameter("case_exponent is defined for C1-C4 only");
    }
}

double case_exponent(PairTag tag, const PairParams& p, double alpha) {
    return std::min(case_exponent(tag, PairBranch::High, p, alpha),
                    case_exponent(tag, PairBranch::Low, p, alpha));
}

BranchCandidate branch_optimum(PairTag tag, PairBranch branch, const PairParams& p) {
    const double a = p.weight1();
    const double b = p.weight2();
    const double zeta = a / b;
    const double e1 = p.eps1;
    const double e2 = p.eps2;
    // Objectives g1 (high branch, after the max is resolved) and g2 (low).
    auto g_plain = [&](double z) { return a / z + b / (1.0 - z); };
    auto g_first_interfered = [&](double z) { return a / ((1.0 + e1) * z - e1) + b / (1.0 - z); };
    auto g_second_interfered = [&](double z) { return a / z + b / (1.0 - (1.0 + e2) * z); };
    // Where the max() in the exponents switches argument.
    const double high_switch = 1.0 - 1.0 / (1.0 + e1 + e1 / e2);
    const double low_switch = 1.0 / (1.0 + e2 + e2 / e1);
    const double low_stationary = (1.0 - 1.0 / (std::sqrt(zeta * (1.0 + e2)) + 1.0)) / (1.0 + e2);

    switch (tag) {
    case PairTag::C1:
        if (branch == PairBranch::High) {
            const double z = std::max(1.0 - 1.0 / (std::sqrt(zeta) + 1.0), high_switch);
            return {z, g_plain(z)};
        } else {
            const double z = std::min(low_stationary, 0.5);
            return {z, g_second_interfered(z)};
        }
    case PairTag::C2:
        if (branch == PairBranch::High) {
            const double z = 1.0 - 1.0 / (std::sqrt(zeta * (1.0 + e1)) + 1.0 + e1);
            return {z, g_first_interfered(z)};
        } else {
            const double z = std::min(low_switch, 0.5);
            return {z, g_plain(z)};
        }
    case PairTag::C3: {
        const double z = 1.0 - 1.0 / (std::sqrt(zeta) + 1.0);
        return {z, g_plain(z)};
    }
    case PairTag::C4:
        if (branch == PairBranch::High) {
            const double s = std::sqrt(1.0 + e1);
            const double z = 1.0 - std::min(1.0 / (s * (std::sqrt(zeta) + s)), 1.0 / (1.0 + e1 + e1 / e2));
            return {z, g_first_interfered(z)};
        } else {
            const double z = std::min({low_stationary, low_switch, 0.5});
            return {z, g_second_interfered(z)};
        }
    default:
        throw InvalidParameter("branch_optimum is defined for C1-C4 only");
    }
}

PairSolution solve_pair(const PairCase& pc, const PairParams& params) {
    params.validate();
    PairSolution sol;
    sol.pair_case = pc;
    switch (pc.tag) {
    case PairTag::T1:
        sol.alpha_star = 0.0;
        sol.psi_star = 0.0;
        return sol;
    case PairTag::T2:
        if (pc.uncached_user == 0) {
            sol.alpha_star = 1.0;
            sol.psi_star = params.weight1();
        } else {
            sol.alpha_star = 0.0;
            sol.psi_star = params.weight2();
        }
        return sol;
    case PairTag::T3:
        // One signal for the shared file, carried on user 1's slot.
        sol.alpha_star = 1.0;
        sol.psi_star = params.eps1 * (params.lambda1 * params.beta1 + params.lambda2 * params.beta2);
        return sol;
    default:
        break;
    }

    const PairParams p = pc.swapped ? params.swapped() : params;
    double alpha = 0.0;
    bool high_branch = true;
    if (pc.tag == PairTag::C3) {
        const auto c = branch_optimum(PairTag::C3, PairBranch::High, p);
        alpha = c.alpha;
        sol.psi_star = c.value;
    } else {
        const auto high = branch_optimum(pc.tag, PairBranch::High, p);
        const auto low = branch_optimum(pc.tag, PairBranch::Low, p);
        if (high.value <= low.value) {
            alpha = high.alpha;
            sol.psi_star = high.value;
        } else {
            alpha = low.alpha;
            sol.psi_star = low.value;
            high_branch = false;
        }
    }
    sol.alpha_star = pc.swapped ? 1.0 - alpha : alpha;
    sol.decoded_first = (high_branch != pc.swapped) ? 0 : 1;
    return sol;
}

double pair_success_probability(const PairSolution& sol, double power) {
    if (!(power > 0.0)) {
        throw InvalidParameter("pair power must be positive");
    }
    return std::exp(-sol.psi_star / power);
}

} // namespace cnoma
