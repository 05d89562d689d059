#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cnoma/bench.hpp"
#include "cnoma/minlp.hpp"
#include "cnoma/pairwise.hpp"
#include "oracles.hpp"

using namespace cnoma;

namespace {

SystemScenario scenario_with(std::vector<double> lambdas, std::vector<std::vector<FileIndex>> caches = {}) {
    SystemScenario s;
    s.library = FileLibrary::evenly_spaced(4, 0.1, 0.1);
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        UserProfile u;
        u.lambda = lambdas[i];
        u.request = static_cast<FileIndex>(i % 4);
        if (i < caches.size()) {
            u.cache = caches[i];
        }
        s.users.push_back(u);
    }
    return s;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ExperimentSpec small_spec() {
    ExperimentSpec e;
    e.name = "unit";
    e.family = reference_family_k3();
    e.methods = {"method1-nocache", "oma", "equal", "mmf"};
    e.family.lambdas = {1.0, 0.5, 0.25, 0.2};
    e.family.cache_capacity = {2, 2, 2, 2};
    e.sweep_variable = "p_max";
    e.sweep_values = {1.0, 4.0, 16.0};
    e.samples = 40;
    e.seed = 3;
    return e;
}

} // namespace

TEST_CASE("equal split") {
    const auto a = baseline_equal(scenario_with({1, 1, 1, 1}, {{}, {1}, {}, {}}));
    CHECK(a.alphas[1] == 0.0);
    for (std::size_t i : {0, 2, 3}) {
        CHECK(a.alphas[i] == doctest::Approx(1.0 / 3).epsilon(1e-6));
    }
    double s = 0;
    for (double v : a.alphas) {
        s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    // staggered: no two active users share a power level
    CHECK(a.alphas[0] != a.alphas[2]);
    CHECK(a.alphas[2] != a.alphas[3]);

    const auto b = baseline_equal(scenario_with({1, 2}));
    CHECK(b.alphas[0] == doctest::Approx(0.5).epsilon(1e-6));
    // larger lambda (weaker channel) takes the larger share
    CHECK(b.alphas[1] > b.alphas[0]);
    const auto c = baseline_equal(scenario_with({1, 2}, {{0}, {1}}));
    CHECK(c.alphas == std::vector<double>{0, 0});
}

TEST_CASE("max-min fair baseline") {
    auto two = scenario_with({1, 1});
    two.p_max = 10.0;
    auto a = baseline_mmf(two);
    auto r = mmf_rates(two, a.alphas);
    CHECK(std::abs(r[0] - r[1]) <= 1e-6);

    auto one = scenario_with({1});
    CHECK(baseline_mmf(one).alphas == std::vector<double>{1.0});

    auto three = scenario_with({1, 0.3, 2.5});
    three.p_max = 5.0;
    CHECK(mmf_cnr_order(three) == std::vector<UserIndex>{1, 0, 2});
    a = baseline_mmf(three);
    r = mmf_rates(three, a.alphas);
    const double mmf_min = *std::min_element(r.begin(), r.end());
    CHECK(*std::max_element(r.begin(), r.end()) - mmf_min <= 1e-6);
    RngStream rng(1);
    for (int t = 0; t < 10000; ++t) {
        std::vector<double> x(3);
        double s = 0;
        for (auto& v : x) {
            v = rng.exponential(1.0);
            s += v;
        }
        for (auto& v : x) {
            v /= s;
        }
        const auto rr = mmf_rates(three, x);
        CHECK(*std::min_element(rr.begin(), rr.end()) <= mmf_min + 1e-9);
    }
}

TEST_CASE("experiment validation") {
    auto e = small_spec();
    CHECK_NOTHROW(e.validate());
    auto bad = e;
    bad.methods = {};
    CHECK_THROWS(bad.validate());
    bad = e;
    bad.methods = {"method3"};
    CHECK_THROWS(bad.validate());
    bad = e;
    bad.sweep_variable = "bandwidth";
    CHECK_THROWS(bad.validate());
    bad = e;
    bad.sweep_values = {};
    CHECK_THROWS(bad.validate());
    bad = e;
    bad.samples = 0;
    CHECK_THROWS(bad.validate());
    bad = e;
    bad.sweep_values = {-1.0};
    CHECK_THROWS(bad.validate());
    CHECK(is_known_method("method2-exact-nocache"));
    CHECK_FALSE(is_known_method("nocache"));

    auto j = experiment_to_json(e);
    const auto back = experiment_from_json(j);
    CHECK(experiment_to_json(back) == j);
    CHECK(config_hash(j).size() == 16);
    CHECK(config_hash(j) == config_hash(experiment_to_json(back)));
    j["samples"] = 41;
    CHECK(config_hash(j) != config_hash(experiment_to_json(e)));
}

TEST_CASE("sweep family expansion") {
    auto e = small_spec();
    e.sweep_variable = "users";
    e.sweep_values = {2, 6};
    const auto f = e.family_at(6);
    CHECK(f.users() == 6);
    CHECK(f.lambdas[4] == e.family.lambdas[0]);
    CHECK(e.family_at(2).users() == 2);
    e.sweep_variable = "cache_capacity";
    const auto g = e.family_at(1);
    for (auto c : g.cache_capacity) {
        CHECK(c == 1);
    }
    e.sweep_variable = "zipf_skew";
    CHECK(e.family_at(0.8).requests == RequestLaw::Zipf);
    CHECK(e.family_at(0.8).zipf_skew == 0.8);
}

TEST_CASE("results table shape and determinism") {
    const auto e = small_spec();
    const auto t1 = run_experiment(e);
    CHECK(t1.rows.size() == e.methods.size() * e.sweep_values.size());
    CHECK(t1.all_ok());
    const auto csv1 = results_csv(t1);
    const auto csv2 = results_csv(run_experiment(e));
    CHECK(csv1 == csv2);
    CHECK(std::count(csv1.begin(), csv1.end(), '\n') == 1 + static_cast<long>(t1.rows.size()));
    for (const auto& r : t1.rows) {
        CHECK(r.value >= 0.0);
        CHECK(r.value <= 1.0);
        CHECK(r.config_hash == t1.config_hash);
    }

    const auto dir = std::filesystem::temp_directory_path() / "cnoma_bench_test";
    emit_plotdata(t1, dir);
    CHECK(slurp(dir / "unit.csv") == csv1);
    CHECK(std::filesystem::exists(dir / "unit.manifest.json"));
    CHECK(std::filesystem::exists(dir / "unit.timing.csv"));
}

TEST_CASE("method failures are reported per row") {
    auto e = small_spec();
    e.methods = {"method2-exact", "equal"};
    e.family.lambdas = {1.0, 0.5, 0.25};
    e.sweep_values = {1e-4};
    e.samples = 10;
    const auto t = run_experiment(e);
    REQUIRE(t.rows.size() == 2);
    for (const auto& r : t.rows) {
        CHECK(r.status == "ok");
    }
}

TEST_CASE("method 2 exact upper-bounds method 1 at K=2") {
    RngStream rng(11);
    for (int t = 0; t < 100; ++t) {
        const auto p = oracle::random_pair(rng);
        const auto sc = oracle::pair_scenario(p, 0, 1, {}, {}, 1.0 + 10.0 * rng.uniform());
        const auto m1 = exact_success_probability(sc, method_allocation("method1", sc));
        double m2 = 0.0;
        try {
            m2 = exact_success_probability(sc, method_allocation("method2-exact", sc));
        } catch (const InfeasibleProblem&) {
            m2 = 0.0;
        }
        CHECK(m2 >= m1 * (1 - 1e-4) - 1e-9);
        CHECK(std::abs(m2 - m1) <= 1e-3 * std::max(m1, 1e-6) + 1e-9);
    }
}

TEST_CASE("golden results") {
    const std::filesystem::path src = CNOMA_SOURCE_DIR;
    const auto e = load_experiment(src / "configs" / "golden_small.json");
    const auto golden = src / "tests" / "golden" / "golden_small.csv";
    REQUIRE(std::filesystem::exists(golden));
    CHECK(results_csv(run_experiment(e)) == slurp(golden));
}

TEST_CASE("no baseline beats the exact optimum at K=2") {
    RngStream rng(12);
    int above = 0;
    for (int t = 0; t < 30; ++t) {
        const auto p = oracle::random_pair(rng);
        std::vector<FileIndex> c1, c2;
        if (rng.uniform() < 0.5) {
            c1.push_back(1);
        }
        if (rng.uniform() < 0.5) {
            c2.push_back(0);
        }
        const auto sc = oracle::pair_scenario(p, 0, 1, c1, c2, 1.0 + 10.0 * rng.uniform());
        double best = 0.0;
        try {
            best = exact_success_probability(sc, method_allocation("method2-exact", sc));
        } catch (const InfeasibleProblem&) {
        }
        for (const char* m : {"method1", "equal", "mmf"}) {
            RngStream mc(12, t);
            const auto est = estimate_success_probability(sc, method_allocation(m, sc), 20000, mc);
            above += est.mean > best + 3 * est.standard_error + 1e-12;
        }
    }
    CHECK(above == 0);
}
