#pragma once

#include <string_view>

#include "cnoma/core_model.hpp"

namespace cnoma {

enum class PairTag {
    T1, ///< both users hold their own request
    T2, ///< exactly one user holds their own request
    T3, ///< same uncached file requested by both
    C1, ///< user 1 holds f2, user 2 holds nothing useful
    C2, ///< user 1 holds nothing useful, user 2 holds f1
    C3, ///< each user holds the other's request
    C4, ///< neither user holds anything useful
};

std::string_view to_string(PairTag tag);

struct PairCase {
    PairTag tag = PairTag::C4;
    /// Users were relabeled so that zeta >= 1. Only meaningful for C1-C4.
    bool swapped = false;
    /// T2 only: which user (0 or 1, original labels) still needs the file.
    std::size_t uncached_user = 0;
};

/// Per-pair channel and threshold parameters, thresholds and betas already
/// scaled for the pair's subchannel.
struct PairParams {
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    double eps1 = 1.0;
    double eps2 = 1.0;
    double beta1 = 1.0;
    double beta2 = 1.0;

    double weight1() const { return lambda1 * eps1 * beta1; }
    double weight2() const { return lambda2 * eps2 * beta2; }
    /// lambda1*eps1*beta1 / (lambda2*eps2*beta2)
    double zeta() const { return weight1() / weight2(); }
    PairParams swapped() const { return {lambda2, lambda1, eps2, eps1, beta2, beta1}; }
    void validate() const;
};

struct PairSolution {
    /// Fraction of the pair budget for the pair's first user (original labels).
    /// Zero for T1 (no transmission).
    double alpha_star = 0.0;
    /// Success probability is exp(-psi_star / P).
    double psi_star = 0.0;
    PairCase pair_case;
    /// Original label (0 or 1) of the user whose signal is decoded first.
    /// Settles the decode order when alpha_star is exactly 1/2.
    std::size_t decoded_first = 0;
};

/// Parameters of users (i, j) on one of W equal subchannels.
PairParams pair_params(const SystemScenario& scenario, UserIndex i, UserIndex j,
                       std::size_t subchannels);

/// Total function over (cache, request) configurations.
PairCase classify_pair(const UserProfile& u1, const UserProfile& u2, const PairParams& params);

/// Optimal split for the classified pair. `params` are in original labels;
/// the relabeling recorded in `pair_case` is applied and undone internally.
PairSolution solve_pair(const PairCase& pair_case, const PairParams& params);

double pair_success_probability(const PairSolution& sol, double power);

/// Which side of alpha = 1/2 an exponent describes: High has user 1 decoded
/// first (alpha >= 1/2), Low has user 2 decoded first (alpha <= 1/2).
enum class PairBranch { High, Low };

/// Exponent Psi(alpha) of the given branch of case C1-C4, in relabeled
/// (zeta >= 1) parameters. Returns +inf outside the branch's feasible range.
/// C3 has a single exponent on (0,1) and ignores the branch.
double case_exponent(PairTag tag, PairBranch branch, const PairParams& relabeled, double alpha);

/// Exponent over the whole of (0,1): the minimum of the two branches.
double case_exponent(PairTag tag, const PairParams& relabeled, double alpha);

/// Closed-form candidates of one branch (stationary point and its value), exposed
/// for the branch-feasibility checks.
struct BranchCandidate {
    double alpha;
    double value;
};
BranchCandidate branch_optimum(PairTag tag, PairBranch branch, const PairParams& relabeled);

} // namespace cnoma
