#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cnoma/minlp.hpp"
#include "cnoma/pairwise.hpp"
#include "oracles.hpp"

using namespace cnoma;

namespace {

std::size_t factorial(std::size_t n) { return n <= 1 ? 1 : n * factorial(n - 1); }

} // namespace

TEST_CASE("two users, no caching: objective is the C4 high-branch exponent") {
    MinlpInstance m;
    m.users = 2;
    m.cache.assign(4, 0);
    m.eps = {0.3, 0.5};
    m.lambdas = {1.2, 0.7};
    m.betas = {0.9, 1.4};
    const std::vector<UserIndex> order = {0, 1};
    const std::vector<double> alpha = {0.7, 0.3};
    const double v = objective(m, OrderingMatrix::from_order(order), alpha);
    // hand expansion of both users' decode chains
    const double d1 = 0.7 - 0.3 * 0.3;
    const double expected = 1.2 * 0.3 * 0.9 / d1 + 0.7 * std::max(0.3 * 1.4 / d1, 0.5 * 1.4 / 0.3);
    CHECK(v == doctest::Approx(expected).epsilon(1e-14));
    const PairParams p{1.2, 0.7, 0.3, 0.5, 0.9, 1.4};
    CHECK(v == doctest::Approx(oracle::direct_exponent(p, false, false, 0.7)).epsilon(1e-14));
}

TEST_CASE("all users self-cached: objective 0") {
    MinlpInstance m;
    m.users = 3;
    m.cache = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    m.eps = {0.1, 0.2, 0.3};
    m.lambdas = {1, 1, 1};
    m.betas = {1, 1, 1};
    const std::vector<UserIndex> order = {2, 0, 1};
    CHECK(objective(m, OrderingMatrix::from_order(order), std::vector<double>{0.3, 0.2, 0.5}) == 0.0);
    const auto sol = solve_exact(m, 1.0);
    CHECK(sol.value == 0.0);
    CHECK(sol.success_probability == 1.0);
}

TEST_CASE("objective is linear in beta") {
    RngStream r(1);
    auto m = oracle::random_minlp(3, r, 0.3);
    const std::vector<UserIndex> order = {1, 0, 2};
    const std::vector<double> alpha = {0.25, 0.7, 0.05};
    double base = 0;
    try {
        base = objective(m, OrderingMatrix::from_order(order), alpha);
    } catch (const InfeasiblePoint&) {
        m.cache.assign(9, 0);
        m.eps = {0.05, 0.05, 0.05};
        base = objective(m, OrderingMatrix::from_order(order), alpha);
    }
    auto scaled = m;
    for (auto& b : scaled.betas) {
        b *= 3.5;
    }
    CHECK(objective(scaled, OrderingMatrix::from_order(order), alpha) == doctest::Approx(3.5 * base).epsilon(1e-13));
}

TEST_CASE("infeasible points and problems") {
    MinlpInstance m;
    m.users = 2;
    m.cache.assign(4, 0);
    m.eps = {2.0, 0.5};
    m.lambdas = {1, 1};
    m.betas = {1, 1};
    const std::vector<UserIndex> order = {0, 1};
    // 0.6 - 2*0.4 < 0
    CHECK_THROWS_AS(objective(m, OrderingMatrix::from_order(order), std::vector<double>{0.6, 0.4}), InfeasiblePoint);
    // alpha contradicts the ordering
    CHECK_THROWS_AS(objective(m, OrderingMatrix::from_order(order), std::vector<double>{0.2, 0.8}), InfeasiblePoint);
    m.xi = 0.9;
    CHECK_THROWS_AS(solve_exact(m, 1.0), InfeasibleProblem);
}

TEST_CASE("ordering matrix helpers") {
    const std::vector<UserIndex> order = {2, 0, 3, 1};
    const auto psi = OrderingMatrix::from_order(order);
    CHECK(psi.is_total_order());
    CHECK(psi.order() == order);
    CHECK(psi.at(2, 1) == 1);
    CHECK(psi.at(1, 2) == 0);
    CHECK(psi.at(0, 0) == 0);
    auto cyclic = psi;
    cyclic.psi = {0, 1, 0, 0, 0, 1, 1, 0, 0};
    cyclic.users = 3;
    CHECK_FALSE(cyclic.is_total_order());
}

TEST_CASE("K=2 without caching matches the pairwise closed form at W=1") {
    RngStream r(2);
    for (int t = 0; t < 30; ++t) {
        const PairParams p = oracle::random_pair(r);
        MinlpInstance m;
        m.users = 2;
        m.cache.assign(4, 0);
        m.eps = {p.eps1, p.eps2};
        m.lambdas = {p.lambda1, p.lambda2};
        m.betas = {p.beta1, p.beta2};
        const auto sol = solve_exact(m, 1.0);
        const auto closed = solve_pair(PairCase{PairTag::C4}, p);
        CHECK(std::abs(sol.value - closed.psi_star) <= 1e-4 * closed.psi_star);
        CHECK(sol.orderings_enumerated == 2);
    }
}

TEST_CASE("mutual caching of three users separates the problem") {
    MinlpInstance m;
    m.users = 3;
    m.cache = {0, 1, 1, 1, 0, 1, 1, 1, 0};
    m.eps = {0.2, 0.5, 0.1};
    m.lambdas = {1.0, 0.5, 2.0};
    m.betas = {1.0, 1.5, 0.7};
    const auto sol = solve_exact(m, 1.0);
    double root_sum = 0;
    std::vector<double> w(3);
    for (int i = 0; i < 3; ++i) {
        w[i] = m.lambdas[i] * m.eps[i] * m.betas[i];
        root_sum += std::sqrt(w[i]);
    }
    CHECK(sol.value == doctest::Approx(root_sum * root_sum).epsilon(1e-7));
    for (int i = 0; i < 3; ++i) {
        CHECK(sol.alpha[i] == doctest::Approx(std::sqrt(w[i]) / root_sum).epsilon(1e-4));
    }
    // simplex grid, step 1e-3, then a 1e-5 pass around the best point
    double grid = std::numeric_limits<double>::infinity();
    double ba = 0, bb = 0;
    auto f = [&](double a, double b) { return w[0] / a + w[1] / b + w[2] / (1 - a - b); };
    for (int i = 1; i < 1000; ++i) {
        for (int j = 1; i + j < 1000; ++j) {
            const double v = f(i * 1e-3, j * 1e-3);
            if (v < grid) {
                grid = v;
                ba = i * 1e-3;
                bb = j * 1e-3;
            }
        }
    }
    for (int i = -100; i <= 100; ++i) {
        for (int j = -100; j <= 100; ++j) {
            const double a = ba + i * 1e-5, b = bb + j * 1e-5;
            if (a > 0 && b > 0 && a + b < 1) {
                grid = std::min(grid, f(a, b));
            }
        }
    }
    CHECK(sol.value <= grid * (1 + 1e-9));
}

TEST_CASE("K=3 exact solve beats random feasible samples") {
    RngStream r(3);
    for (int t = 0; t < 5; ++t) {
        const auto m = oracle::random_minlp(3, r, 0.3);
        const auto sol = solve_exact(m, 1.0);
        RngStream rs(t);
        const double sampled = oracle::random_search(m, 20000, rs);
        CHECK(sol.value <= sampled * (1 + 1e-9));
    }
}

TEST_CASE("returned solutions satisfy the constraints and enumerate K! orders") {
    RngStream r(4);
    for (std::size_t k = 1; k <= 4; ++k) {
        for (int t = 0; t < 5; ++t) {
            const auto m = oracle::random_minlp(k, r, 0.3);
            const auto sol = solve_exact(m, 1.0);
            CHECK(sol.orderings_enumerated == factorial(k));
            CHECK(sol.psi.is_total_order());
            CHECK(satisfies_constraints(m, sol.psi, sol.alpha, 1e-9));
            CHECK(std::accumulate(sol.alpha.begin(), sol.alpha.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("adding a cache entry never raises the optimum") {
    RngStream r(5);
    for (int t = 0; t < 20; ++t) {
        const auto m = oracle::random_minlp(3, r, 0.2);
        const auto base = solve_exact(m, 1.0);
        auto more = m;
        UserIndex i = r.below(3), j = r.below(3);
        if (i == j) {
            j = (j + 1) % 3;
        }
        more.cache[i * 3 + j] = 1;
        const auto better = solve_exact(more, 1.0);
        CHECK(better.value <= base.value * (1 + 1e-7));
    }
}

TEST_CASE("exact success probability matches Monte Carlo of the returned allocation") {
    RngStream r(6);
    for (int t = 0; t < 5; ++t) {
        SystemScenario s;
        s.library = FileLibrary::evenly_spaced(38, 0.016, 0.016);
        for (int i = 0; i < 3; ++i) {
            UserProfile u;
            u.lambda = 1.0 / (i + 1);
            u.request = r.below(38);
            for (int c = 0; c < 2; ++c) {
                u.cache.push_back(r.below(38));
            }
            s.users.push_back(u);
        }
        const auto sol = solve_exact(MinlpInstance::from_scenario(s), s.p_max);
        const auto alloc = to_allocation(sol);
        RngStream mc(t);
        const auto est = estimate_success_probability(s, alloc, 100000, mc);
        CHECK(std::abs(est.mean - sol.success_probability) <= 3 * est.standard_error + 1e-6);
    }
}

TEST_CASE("self-cached users sit at zero and skip enumeration") {
    MinlpInstance m;
    m.users = 3;
    m.cache = {1, 0, 0, 0, 0, 0, 0, 0, 0};
    m.eps = {0.1, 0.2, 0.3};
    m.lambdas = {1, 1, 1};
    m.betas = {1, 1, 1};
    const auto sol = solve_exact(m, 1.0);
    CHECK(sol.alpha[0] == 0.0);
    CHECK(sol.orderings_enumerated == 2);
    CHECK(sol.order.back() == 0);
}
