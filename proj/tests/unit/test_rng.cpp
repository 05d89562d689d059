#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "cnoma/rng.hpp"

using cnoma::RngStream;

TEST_CASE("same key gives the same sequence") {
    RngStream a(42, 3, 7);
    RngStream b(42, 3, 7);
    for (int i = 0; i < 1000; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
}

TEST_CASE("different keys give different sequences") {
    std::set<std::uint64_t> first;
    for (std::uint64_t s = 0; s < 4; ++s) {
        for (std::uint64_t st = 0; st < 4; ++st) {
            for (std::uint64_t sub = 0; sub < 4; ++sub) {
                first.insert(RngStream(s, st, sub).next_u64());
            }
        }
    }
    CHECK(first.size() == 64);
}

TEST_CASE("split does not depend on the parent's position") {
    RngStream a(9);
    RngStream b(9);
    for (int i = 0; i < 17; ++i) {
        b.next_u64();
    }
    auto ca = a.split(5);
    auto cb = b.split(5);
    for (int i = 0; i < 100; ++i) {
        CHECK(ca.next_u64() == cb.next_u64());
    }
}

TEST_CASE("uniform ranges") {
    RngStream r(1);
    for (int i = 0; i < 100000; ++i) {
        const double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        const double v = r.uniform_open_low();
        CHECK(v > 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("below covers its range evenly") {
    RngStream r(2);
    std::vector<int> counts(7, 0);
    const int n = 70000;
    for (int i = 0; i < n; ++i) {
        const auto x = r.below(7);
        REQUIRE(x < 7);
        ++counts[x];
    }
    for (int c : counts) {
        CHECK(std::abs(c - n / 7) < 5 * std::sqrt(n / 7.0));
    }
    CHECK_THROWS(r.below(0));
}

TEST_CASE("exponential, normal and gamma moments") {
    RngStream r(3);
    const int n = 400000;
    double se = 0, sn = 0, sn2 = 0, sg = 0, sg2 = 0;
    for (int i = 0; i < n; ++i) {
        se += r.exponential(2.0);
        const double z = r.normal();
        sn += z;
        sn2 += z * z;
        const double g = r.gamma(3.0, 0.5);
        sg += g;
        sg2 += g * g;
    }
    CHECK(se / n == doctest::Approx(0.5).epsilon(0.01));
    CHECK(std::abs(sn / n) < 0.01);
    CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.01));
    const double mg = sg / n;
    CHECK(mg == doctest::Approx(1.5).epsilon(0.01));
    CHECK(sg2 / n - mg * mg == doctest::Approx(0.75).epsilon(0.02));
}

TEST_CASE("gamma with shape below one") {
    RngStream r(4);
    const int n = 400000;
    double s = 0;
    for (int i = 0; i < n; ++i) {
        const double g = r.gamma(0.4, 2.0);
        CHECK(g >= 0.0);
        s += g;
    }
    CHECK(s / n == doctest::Approx(0.8).epsilon(0.02));
}
