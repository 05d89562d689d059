#include "cnoma/minlp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace cnoma {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Linear constraint coeff . alpha >= rhs.
struct LinearConstraint {
    std::vector<double> coeff;
    double rhs;
};

// One signal a user must decode: user `user` decodes the signal of `signal`
// with interference from `interferers` (all indices are user ids).
struct RequiredDecode {
    UserIndex user;
    UserIndex signal;
    std::vector<UserIndex> interferers;
    double weight; // lambda_user * eps_signal * beta_user
};

// Required decodes for a full order (strongest first) in which every listed
// user transmits; users absent from the order have alpha = 0.
std::vector<RequiredDecode> required_decodes(const MinlpInstance& inst, std::span<const UserIndex> order) {
    std::vector<RequiredDecode> out;
    for (std::size_t ri = 0; ri < order.size(); ++ri) {
        const UserIndex i = order[ri];
        for (std::size_t rj = 0; rj <= ri; ++rj) {
            const UserIndex j = order[rj];
            if (inst.cached(i, j)) {
                continue;
            }
            RequiredDecode d{i, j, {}, inst.lambdas[i] * inst.eps[j] * inst.betas[i]};
            for (std::size_t rk = rj + 1; rk < order.size(); ++rk) {
                const UserIndex k = order[rk];
                if (!inst.cached(i, k)) {
                    d.interferers.push_back(k);
                }
            }
            out.push_back(std::move(d));
        }
    }
    return out;
}

double margin(const MinlpInstance& inst, const RequiredDecode& d, std::span<const double> alpha) {
    double interference = 0.0;
    for (UserIndex k : d.interferers) {
        interference += alpha[k];
    }
    return alpha[d.signal] - inst.eps[d.signal] * interference;
}

std::vector<UserIndex> active_users(const MinlpInstance& inst) {
    std::vector<UserIndex> active;
    for (UserIndex i = 0; i < inst.users; ++i) {
        if (!inst.self_cached(i)) {
            active.push_back(i);
        }
    }
    return active;
}

// Central-cut ellipsoid minimization of a convex function over a polytope in
// R^dim. `violated(x)` returns the index of a violated constraint or -1;
// constraints and objective supply (sub)gradients in x.
class Ellipsoid {
public:
    Ellipsoid(std::vector<double> centre, double radius)
        : dim_(centre.size()), x_(std::move(centre)), p_(dim_ * dim_, 0.0) {
        for (std::size_t i = 0; i < dim_; ++i) {
            p_[i * dim_ + i] = radius * radius;
        }
    }

    const std::vector<double>& centre() const { return x_; }

    // sqrt(g' P g): half-width of the ellipsoid along g.
    double width(const std::vector<double>& g) const {
        double s = 0.0;
        for (std::size_t i = 0; i < dim_; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < dim_; ++j) {
                row += p_[i * dim_ + j] * g[j];
            }
            s += g[i] * row;
        }
        return std::sqrt(std::max(s, 0.0));
    }

    // Keep the half {y : g.(y - x) <= 0}.
    bool cut(const std::vector<double>& g) {
        const double w = width(g);
        if (!(w > 0.0) || !std::isfinite(w)) {
            return false;
        }
        std::vector<double> pg(dim_, 0.0);
        for (std::size_t i = 0; i < dim_; ++i) {
            for (std::size_t j = 0; j < dim_; ++j) {
                pg[i] += p_[i * dim_ + j] * g[j] / w;
            }
        }
        if (dim_ == 1) {
            x_[0] -= 0.5 * pg[0];
            p_[0] *= 0.25;
            return true;
        }
        const double n = static_cast<double>(dim_);
        for (std::size_t i = 0; i < dim_; ++i) {
            x_[i] -= pg[i] / (n + 1.0);
        }
        const double scale = n * n / (n * n - 1.0);
        const double shrink = 2.0 / (n + 1.0);
        for (std::size_t i = 0; i < dim_; ++i) {
            for (std::size_t j = i; j < dim_; ++j) {
                const double v = scale * (p_[i * dim_ + j] - shrink * pg[i] * pg[j]);
                p_[i * dim_ + j] = v;
                p_[j * dim_ + i] = v;
            }
        }
        return true;
    }

private:
    std::size_t dim_;
    std::vector<double> x_;
    std::vector<double> p_;
};

} // namespace

void MinlpInstance::validate() const {
    if (users == 0) {
        throw InvalidParameter("instance needs at least one user");
    }
    if (cache.size() != users * users || eps.size() != users || lambdas.size() != users ||
        betas.size() != users) {
        throw InvalidParameter("instance arrays must match the user count");
    }
    for (auto c : cache) {
        if (c > 1) {
            throw InvalidParameter("cache matrix entries must be binary");
        }
    }
    for (std::size_t i = 0; i < users; ++i) {
        if (!(eps[i] > 0.0) || !(lambdas[i] > 0.0) || !(betas[i] > 0.0)) {
            throw InvalidParameter("thresholds, rates and betas must be positive");
        }
    }
    if (!(xi > 0.0)) {
        throw InvalidParameter("xi must be positive");
    }
}

MinlpInstance MinlpInstance::from_scenario(const SystemScenario& scenario, double xi) {
    scenario.validate();
    MinlpInstance inst;
    inst.users = scenario.user_count();
    inst.xi = xi;
    inst.cache.assign(inst.users * inst.users, 0);
    for (UserIndex i = 0; i < inst.users; ++i) {
        inst.eps.push_back(scenario.request_threshold(i));
        inst.lambdas.push_back(scenario.users[i].lambda);
        inst.betas.push_back(scenario.beta(i));
        for (UserIndex j = 0; j < inst.users; ++j) {
            inst.cache[i * inst.users + j] = scenario.users[i].has_cached(scenario.users[j].request) ? 1 : 0;
        }
    }
    return inst;
}

OrderingMatrix OrderingMatrix::from_order(std::span<const UserIndex> order) {
    OrderingMatrix m;
    m.users = order.size();
    m.psi.assign(m.users * m.users, 0);
    for (std::size_t a = 0; a < order.size(); ++a) {
        for (std::size_t b = a + 1; b < order.size(); ++b) {
            m.psi[order[a] * m.users + order[b]] = 1;
        }
    }
    return m;
}

bool OrderingMatrix::is_total_order() const {
    for (UserIndex i = 0; i < users; ++i) {
        if (at(i, i) != 0) {
            return false;
        }
        for (UserIndex j = 0; j < users; ++j) {
            if (i != j && at(i, j) + at(j, i) != 1) {
                return false;
            }
        }
    }
    // Antisymmetric and complete: transitive iff out-degrees are 0..K-1.
    std::vector<int> degree(users, 0);
    for (UserIndex i = 0; i < users; ++i) {
        for (UserIndex j = 0; j < users; ++j) {
            degree[i] += at(i, j);
        }
    }
    std::sort(degree.begin(), degree.end());
    for (std::size_t r = 0; r < users; ++r) {
        if (degree[r] != static_cast<int>(r)) {
            return false;
        }
    }
    return true;
}

std::vector<UserIndex> OrderingMatrix::order() const {
    std::vector<UserIndex> ord(users);
    std::iota(ord.begin(), ord.end(), UserIndex{0});
    std::vector<int> degree(users, 0);
    for (UserIndex i = 0; i < users; ++i) {
        for (UserIndex j = 0; j < users; ++j) {
            degree[i] += at(i, j);
        }
    }
    std::sort(ord.begin(), ord.end(), [&](UserIndex a, UserIndex b) { return degree[a] > degree[b]; });
    return ord;
}

double objective(const MinlpInstance& inst, const OrderingMatrix& psi, std::span<const double> alpha) {
    inst.validate();
    if (psi.users != inst.users || alpha.size() != inst.users) {
        throw InvalidParameter("ordering and allocation must match the user count");
    }
    if (!psi.is_total_order()) {
        throw InfeasiblePoint("ordering matrix is not a total order");
    }
    for (UserIndex i = 0; i < inst.users; ++i) {
        for (UserIndex j = 0; j < inst.users; ++j) {
            const double gap = alpha[i] - alpha[j] - psi.at(i, j);
            if (gap < -1.0 - 1e-12 || gap > 1e-12) {
                throw InfeasiblePoint("allocation contradicts the ordering matrix");
            }
        }
    }
    const std::vector<UserIndex> order = psi.order();
    double total = 0.0;
    std::vector<double> worst(inst.users, 0.0);
    for (const auto& d : required_decodes(inst, order)) {
        if (inst.self_cached(d.user)) {
            continue;
        }
        const double m = margin(inst, d, alpha);
        if (m < inst.xi) {
            throw InfeasiblePoint("decode margin of user " + std::to_string(d.user) + " on signal " +
                                  std::to_string(d.signal) + " is below xi");
        }
        worst[d.user] = std::max(worst[d.user], d.weight / m);
    }
    for (double w : worst) {
        total += w;
    }
    return total;
}

OrderingSolution solve_ordering(const MinlpInstance& inst, std::span<const UserIndex> order,
                                const ExactOptions& options) {
    OrderingSolution sol;
    sol.alpha.assign(inst.users, 0.0);
    const std::size_t n = order.size();
    if (n == 0) {
        sol.feasible = true;
        return sol;
    }
    const auto decodes = required_decodes(inst, order);

    // Linear constraints in alpha: decreasing order and decode margins.
    std::vector<LinearConstraint> cons;
    for (std::size_t r = 0; r + 1 < n; ++r) {
        LinearConstraint c{std::vector<double>(inst.users, 0.0), 0.0};
        c.coeff[order[r]] = 1.0;
        c.coeff[order[r + 1]] = -1.0;
        cons.push_back(std::move(c));
    }
    for (const auto& d : decodes) {
        LinearConstraint c{std::vector<double>(inst.users, 0.0), inst.xi};
        c.coeff[d.signal] += 1.0;
        for (UserIndex k : d.interferers) {
            c.coeff[k] -= inst.eps[d.signal];
        }
        cons.push_back(std::move(c));
    }

    // Chart: x_r = alpha_{order[r]} for r < n-1, last user takes the rest.
    const std::size_t dim = n - 1;
    auto to_alpha = [&](const std::vector<double>& x) {
        std::vector<double> a(inst.users, 0.0);
        double rest = 1.0;
        for (std::size_t r = 0; r < dim; ++r) {
            a[order[r]] = x[r];
            rest -= x[r];
        }
        a[order[n - 1]] = rest;
        return a;
    };
    auto to_chart = [&](const std::vector<double>& grad_alpha) {
        std::vector<double> g(dim);
        for (std::size_t r = 0; r < dim; ++r) {
            g[r] = grad_alpha[order[r]] - grad_alpha[order[n - 1]];
        }
        return g;
    };
    auto value_and_grad = [&](const std::vector<double>& a, std::vector<double>& grad_alpha) {
        std::vector<double> worst(inst.users, -1.0);
        std::vector<const RequiredDecode*> arg(inst.users, nullptr);
        std::vector<double> worst_margin(inst.users, 0.0);
        for (const auto& d : decodes) {
            const double m = margin(inst, d, a);
            const double v = d.weight / m;
            if (v > worst[d.user]) {
                worst[d.user] = v;
                arg[d.user] = &d;
                worst_margin[d.user] = m;
            }
        }
        grad_alpha.assign(inst.users, 0.0);
        double total = 0.0;
        for (UserIndex i = 0; i < inst.users; ++i) {
            if (!arg[i]) {
                continue;
            }
            total += worst[i];
            const auto& d = *arg[i];
            const double scale = -d.weight / (worst_margin[i] * worst_margin[i]);
            grad_alpha[d.signal] += scale;
            for (UserIndex k : d.interferers) {
                grad_alpha[k] -= scale * inst.eps[d.signal];
            }
        }
        return total;
    };

    if (dim == 0) {
        const auto a = to_alpha({});
        for (const auto& c : cons) {
            double lhs = 0.0;
            for (std::size_t u = 0; u < inst.users; ++u) {
                lhs += c.coeff[u] * a[u];
            }
            if (lhs < c.rhs) {
                return sol;
            }
        }
        std::vector<double> g;
        sol.feasible = true;
        sol.alpha = a;
        sol.value = value_and_grad(a, g);
        return sol;
    }

    const double d = static_cast<double>(dim);
    const std::size_t max_iter =
        options.max_iterations ? options.max_iterations : static_cast<std::size_t>(100.0 * d * (d + 1.0) + 200.0);
    Ellipsoid ell(std::vector<double>(dim, 1.0 / static_cast<double>(n)), std::sqrt(static_cast<double>(n)));
    double best = kInf;
    double lower = -kInf;
    std::vector<double> grad_alpha;
    for (std::size_t it = 0; it < max_iter; ++it) {
        sol.iterations = it + 1;
        const auto& x = ell.centre();
        const auto a = to_alpha(x);
        const LinearConstraint* violated = nullptr;
        double worst_violation = 0.0;
        for (const auto& c : cons) {
            double lhs = 0.0;
            for (std::size_t u = 0; u < inst.users; ++u) {
                lhs += c.coeff[u] * a[u];
            }
            const double v = c.rhs - lhs;
            if (v > worst_violation) {
                worst_violation = v;
                violated = &c;
            }
        }
        if (violated) {
            std::vector<double> g = to_chart(violated->coeff);
            for (auto& v : g) {
                v = -v;
            }
            // Even the best point of the ellipsoid misses the half-space.
            if (worst_violation > ell.width(g) * (1.0 + 1e-12)) {
                break;
            }
            if (!ell.cut(g)) {
                break;
            }
            continue;
        }
        const double f = value_and_grad(a, grad_alpha);
        std::vector<double> g = to_chart(grad_alpha);
        if (f < best) {
            best = f;
            sol.alpha = a;
            sol.feasible = true;
        }
        const double w = ell.width(g);
        lower = std::max(lower, f - w);
        if (best - lower <= options.relative_tolerance * best) {
            break;
        }
        if (!ell.cut(g)) {
            break;
        }
    }
    sol.value = best;
    return sol;
}

ExactSolution solve_exact(const MinlpInstance& inst, double p_max, const ExactOptions& options) {
    inst.validate();
    if (!(p_max > 0.0)) {
        throw InvalidParameter("p_max must be positive");
    }
    std::vector<UserIndex> active = active_users(inst);
    if (active.size() > 8) {
        throw InvalidParameter("exact enumeration supports at most 8 users needing power");
    }
    std::vector<UserIndex> idle;
    for (UserIndex i = 0; i < inst.users; ++i) {
        if (inst.self_cached(i)) {
            idle.push_back(i);
        }
    }

    ExactSolution best;
    best.value = kInf;
    std::vector<UserIndex> perm = active;
    do {
        ++best.orderings_enumerated;
        const OrderingSolution s = solve_ordering(inst, perm, options);
        if (!s.feasible) {
            continue;
        }
        ++best.feasible_orderings;
        if (s.value < best.value * (1.0 - 1e-12)) {
            best.value = s.value;
            best.alpha = s.alpha;
            best.order = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));

    if (!std::isfinite(best.value)) {
        throw InfeasibleProblem("no decode order admits an allocation with every margin >= xi");
    }
    best.order.insert(best.order.end(), idle.begin(), idle.end());
    best.psi = OrderingMatrix::from_order(best.order);
    best.success_probability = std::exp(-best.value / p_max);
    return best;
}

PowerAllocation to_allocation(const ExactSolution& solution) {
    std::vector<double> alpha = solution.alpha;
    stagger_ties(alpha, solution.order);
    return PowerAllocation::full_bandwidth(std::move(alpha));
}

bool satisfies_constraints(const MinlpInstance& inst, const OrderingMatrix& psi, std::span<const double> alpha,
                           double tol) {
    if (psi.users != inst.users || alpha.size() != inst.users) {
        return false;
    }
    for (UserIndex i = 0; i < inst.users; ++i) {
        if (psi.at(i, i) != 0) {
            return false;
        }
        for (UserIndex j = 0; j < inst.users; ++j) {
            if (psi.at(i, j) > 1) {
                return false;
            }
            if (i != j && psi.at(i, j) + psi.at(j, i) != 1) {
                return false;
            }
            const double gap = alpha[i] - alpha[j] - psi.at(i, j);
            if (gap < -1.0 - tol || gap > tol) {
                return false;
            }
        }
    }
    if (!psi.is_total_order()) {
        return false;
    }
    double sum = 0.0;
    for (double a : alpha) {
        if (a < -tol || a > 1.0 + tol) {
            return false;
        }
        sum += a;
    }
    const bool needs_power = !active_users(inst).empty();
    if (std::abs(sum - (needs_power ? 1.0 : 0.0)) > tol) {
        return false;
    }
    const auto order = psi.order();
    for (const auto& d : required_decodes(inst, order)) {
        if (inst.self_cached(d.user)) {
            continue;
        }
        if (margin(inst, d, alpha) < inst.xi - tol) {
            return false;
        }
    }
    return true;
}

} // namespace cnoma
