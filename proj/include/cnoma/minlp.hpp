#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "cnoma/core_model.hpp"

namespace cnoma {

class InfeasiblePoint : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

class InfeasibleProblem : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Full-bandwidth power allocation problem for K users.
///
/// f_j is the file requested by user j; cache(i, j) is 1 iff user i holds
/// f_j. A user holding their own request needs no power and decodes nothing.
struct MinlpInstance {
    std::size_t users = 0;
    std::vector<std::uint8_t> cache; // row-major K x K
    std::vector<double> eps;
    std::vector<double> lambdas;
    std::vector<double> betas;
    double xi = 1e-6;

    bool cached(UserIndex i, UserIndex j) const { return cache[i * users + j] != 0; }
    bool self_cached(UserIndex i) const { return cached(i, i); }
    void validate() const;

    static MinlpInstance from_scenario(const SystemScenario& scenario, double xi = 1e-6);
};

/// psi(i, j) = 1 means alpha_i >= alpha_j (i is decoded before j).
/// The diagonal is 0 so each user's own-file term stays active.
struct OrderingMatrix {
    std::size_t users = 0;
    std::vector<std::uint8_t> psi;

    int at(UserIndex i, UserIndex j) const { return psi[i * users + j]; }

    /// From a decode order listing users strongest first.
    static OrderingMatrix from_order(std::span<const UserIndex> order);
    /// Antisymmetric, zero diagonal, transitive.
    bool is_total_order() const;
    /// Users strongest first. Requires is_total_order().
    std::vector<UserIndex> order() const;
};

/// Exponent of the all-users-succeed probability: sum over users i that
/// need a transmission of lambda_i * max_j eps_j beta_i / D_ij, the max
/// running over the signals i must decode (f_j uncached by i, j not weaker
/// than i), with D_ij = alpha_j - eps_j * sum of uncached weaker signals.
/// Success probability at total power P is exp(-objective / P).
///
/// Throws InfeasiblePoint when a required denominator is below xi or when
/// alpha contradicts the ordering.
double objective(const MinlpInstance& instance, const OrderingMatrix& psi, std::span<const double> alpha);

struct ExactOptions {
    double relative_tolerance = 1e-10;
    std::size_t max_iterations = 0; // 0 selects a dimension-based default
};

struct OrderingSolution {
    bool feasible = false;
    std::vector<double> alpha;
    double value = 0.0;
    std::size_t iterations = 0;
};

/// Minimizes the convex inner problem for one decode order (strongest
/// first, listing only users that need power) by the central-cut
/// ellipsoid method on the simplex chart.
OrderingSolution solve_ordering(const MinlpInstance& instance, std::span<const UserIndex> order,
                                const ExactOptions& options = {});

struct ExactSolution {
    OrderingMatrix psi;
    std::vector<UserIndex> order;
    std::vector<double> alpha;
    double value = 0.0;
    double success_probability = 0.0;
    std::size_t orderings_enumerated = 0;
    std::size_t feasible_orderings = 0;
};

/// Enumerates every total order of the users that need power (n! of them)
/// and keeps the best inner optimum; ties go to the lexicographically
/// smallest order. Users holding their own request sit at alpha = 0.
ExactSolution solve_exact(const MinlpInstance& instance, double p_max, const ExactOptions& options = {});

/// Full-bandwidth allocation for the SIC decoder, with exact ties in the
/// solver output separated by 1e-9 offsets that respect the chosen order.
PowerAllocation to_allocation(const ExactSolution& solution);

/// Checks the ordering/simplex/margin constraints of the formulation:
/// binary ones exactly, real ones to `tol`.
bool satisfies_constraints(const MinlpInstance& instance, const OrderingMatrix& psi,
                           std::span<const double> alpha, double tol = 1e-9);

} // namespace cnoma
