// One PASS/FAIL line per criterion. Tolerances are fixed here; exit status
// is nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <string>

#include <json.hpp>

#include "cnoma/bench.hpp"
#include "cnoma/interpair.hpp"
#include "cnoma/minlp.hpp"
#include "cnoma/mlp.hpp"
#include "cnoma/pairwise.hpp"
#include "cnoma/rl.hpp"
#include "cnoma/scenario_io.hpp"
#include "oracles.hpp"

using namespace cnoma;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = CNOMA_SOURCE_DIR;

struct Outcome {
    bool pass = true;
    std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

struct Pattern {
    bool c1, c2;
};

Pattern pattern_of(PairTag t) {
    switch (t) {
    case PairTag::C1: return {true, false};
    case PairTag::C2: return {false, true};
    case PairTag::C3: return {true, true};
    default: return {false, false};
    }
}

// 1. closed forms vs a 1e-5 grid with local refinement
Outcome closed_form_optimality() {
    constexpr double kStep = 1e-5;
    constexpr double kRel = 1e-4;
    Outcome o;
    double worst = 0;
    int failures = 0;
    for (PairTag tag : {PairTag::C1, PairTag::C2, PairTag::C3, PairTag::C4}) {
        RngStream r(1, static_cast<std::uint64_t>(tag));
        const auto pat = pattern_of(tag);
        for (int i = 0; i < 1000; ++i) {
            const auto p = oracle::random_pair(r);
            const auto sol = solve_pair(PairCase{tag}, p);
            const double grid =
                oracle::grid_minimum([&](double a) { return oracle::direct_exponent(p, pat.c1, pat.c2, a); }, kStep);
            const double rel = (sol.psi_star - grid) / grid;
            worst = std::max(worst, rel);
            failures += rel > kRel;
        }
    }
    o.pass = failures == 0;
    o.detail = fmt("4000 instances, %.0f above grid*(1+1e-4), worst excess %.3g", failures, worst);
    return o;
}

// 2. exp(-psi/P) vs Monte Carlo at 1e5 samples, 3 binomial SE
Outcome analytic_vs_monte_carlo() {
    constexpr std::size_t kSamples = 100000;
    struct Setup {
        PairTag tag;
        FileIndex r1, r2;
        std::vector<FileIndex> c1, c2;
    };
    const std::vector<Setup> setups = {
        {PairTag::T1, 0, 1, {0}, {1}},   {PairTag::T2, 0, 1, {0}, {}}, {PairTag::T3, 0, 0, {}, {}},
        {PairTag::C1, 0, 1, {1}, {}},    {PairTag::C2, 0, 1, {}, {0}}, {PairTag::C3, 0, 1, {1}, {0}},
        {PairTag::C4, 0, 1, {}, {}},
    };
    Outcome o;
    int outside = 0, total = 0;
    double worst_z = 0;
    std::string recheck;
    for (const auto& su : setups) {
        RngStream r(2, static_cast<std::uint64_t>(su.tag));
        for (int i = 0; i < 50; ++i) {
            const auto p = oracle::random_pair(r);
            auto s = oracle::pair_scenario(p, su.r1, su.r2, su.c1, su.c2, 1.0);
            // pick P so the success probability lands in [0.05, 0.95]
            const double psi = plan_method1(s).stage.pair_psis.at(0);
            const double target = 0.05 + 0.9 * r.uniform();
            s.p_max = psi > 0 ? psi / -std::log(target) : 1.0;
            const auto plan = plan_method1(s);
            if (plan.pairs.at(0).pair_case.tag != su.tag) {
                ++outside;
                ++total;
                continue;
            }
            const double analytic = plan.stage.success_probability();
            RngStream mc(2, 1000 + static_cast<std::uint64_t>(su.tag), i);
            const auto est = estimate_success_probability(s, plan.allocation, kSamples, mc);
            const double se = std::sqrt(analytic * (1 - analytic) / kSamples);
            const double dev = std::abs(est.mean - analytic);
            if (se > 0) {
                worst_z = std::max(worst_z, dev / se);
            }
            if (dev > 3 * se + 1e-12) {
                ++outside;
                // follow-up only, the verdict stays at 1e5 samples
                RngStream big(2, 0x726563686b, total);
                const auto re = estimate_success_probability(s, plan.allocation, 100 * kSamples, big);
                recheck += " " + std::string(to_string(su.tag)) +
                           fmt("#%.0f z=%.2f, at 1e7 z=%.2f;", i, (est.mean - analytic) / se,
                               (re.mean - analytic) / (se / 10));
            }
            ++total;
        }
    }
    o.pass = outside == 0;
    o.detail = fmt("%.0f instances, %.0f outside 3 SE, largest |z| %.2f", total, outside, worst_z);
    if (!recheck.empty()) {
        o.detail += "; rechecked:" + recheck;
    }
    return o;
}

double stage_objective(const std::vector<double>& psi, const std::vector<double>& p) {
    double s = 0;
    for (std::size_t i = 0; i < psi.size(); ++i) {
        s += psi[i] / p[i];
    }
    return s;
}

// 3. square-root budgets vs random simplex points
Outcome kkt_split() {
    Outcome o;
    RngStream r(3);
    double worst = -1;
    int improved = 0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 2 + r.below(7);
        std::vector<double> psi(n);
        for (auto& v : psi) {
            v = oracle::log_uniform(r, 0.01, 10);
        }
        const double pmax = oracle::log_uniform(r, 0.1, 10);
        const auto best = allocate_budgets(psi, pmax);
        const double v = stage_objective(psi, best);
        for (int k = 0; k < 10000; ++k) {
            std::vector<double> x(n);
            if (k % 2 == 0) {
                // global: Dirichlet(1)
                for (auto& e : x) {
                    e = r.exponential(1.0);
                }
            } else {
                // local: multiplicative jitter around the optimum
                const double scale = std::pow(10.0, -1.0 - 5.0 * r.uniform());
                for (std::size_t i = 0; i < n; ++i) {
                    x[i] = best[i] * std::exp(scale * r.normal());
                }
            }
            const double s = std::accumulate(x.begin(), x.end(), 0.0);
            for (auto& e : x) {
                e *= pmax / s;
            }
            const double rel = (v - stage_objective(psi, x)) / v;
            worst = std::max(worst, rel);
            improved += rel > 1e-9;
        }
    }
    o.pass = improved == 0;
    o.detail = fmt("1e6 perturbations, %.0f improve by > 1e-9, best relative gain %.3g", improved, worst);
    return o;
}

// 4. exact Method 2 vs C4 at K=2 and vs random search at K=3
Outcome exact_solver() {
    Outcome o;
    RngStream r(4);
    double worst2 = 0;
    int bad2 = 0;
    for (int t = 0; t < 100; ++t) {
        const PairParams p = oracle::random_pair(r);
        MinlpInstance m;
        m.users = 2;
        m.cache.assign(4, 0);
        m.eps = {p.eps1, p.eps2};
        m.lambdas = {p.lambda1, p.lambda2};
        m.betas = {p.beta1, p.beta2};
        const auto sol = solve_exact(m, 1.0);
        const double closed = solve_pair(PairCase{PairTag::C4}, p).psi_star;
        const double rel = std::abs(sol.value - closed) / closed;
        worst2 = std::max(worst2, rel);
        bad2 += rel > 1e-4;
    }
    int bad3 = 0;
    double margin = std::numeric_limits<double>::infinity();
    for (int t = 0; t < 30; ++t) {
        const auto m = oracle::random_minlp(3, r, 0.3);
        const auto sol = solve_exact(m, 1.0);
        RngStream rs(4, 3, t);
        const double sampled = oracle::random_search(m, 100000, rs);
        bad3 += sol.value > sampled * (1 + 1e-9);
        margin = std::min(margin, (sampled - sol.value) / sampled);
    }
    o.pass = bad2 == 0 && bad3 == 0;
    o.detail = fmt("K=2: %.0f/100 off by > 1e-4 (worst %.3g); K=3: %.0f/30 beaten by sampling", bad2, worst2, bad3) +
               fmt(" (smallest margin %.3g)", margin);
    return o;
}

// 5. backprop vs central differences
Outcome gradients() {
    Outcome o;
    RngStream r(5);
    double worst = 0;
    int bad = 0;
    for (int t = 0; t < 20; ++t) {
        const std::size_t k = 2 + r.below(3);
        const auto act = t % 2 ? OutputActivation::Sigmoid : OutputActivation::Softmax;
        Mlp net({k * k, 6, 5, k}, 500 + t, act);
        // generic point: zero biases can park a dead ReLU layer on its kink
        for (auto& p : net.parameters()) {
            p = 2.0 * r.uniform() - 1.0;
        }
        std::vector<double> x(k * k), target(k);
        for (auto& v : x) {
            v = r.uniform();
        }
        for (auto& v : target) {
            v = r.uniform();
        }
        std::vector<double> lambdas(k), betas(k, 1.0);
        for (std::size_t i = 0; i < k; ++i) {
            lambdas[i] = 1.0 / double(i + 1);
        }
        const auto ctx = make_sinr_context(lambdas, betas, 1.0, 64, t);
        const std::vector<std::uint8_t> mask(k, 1);
        for (auto loss : {LossKind::Mae, LossKind::MaeSinr}) {
            const auto rep = gradient_check(net, x, mask, target, loss, &ctx);
            worst = std::max(worst, rep.max_relative_error);
            bad += rep.max_relative_error > 1e-4;
        }
    }
    o.pass = bad == 0;
    o.detail = fmt("20 nets x 2 losses, %.0f above 1e-4, worst %.3g", bad, worst);
    return o;
}

struct LearningResult {
    Outcome outcome;
    DualPredictor dual;
    bool trained = false;
};

// 6. learning pipeline on the K=3 family
LearningResult learning_pipeline() {
    LearningResult res;
    Outcome& o = res.outcome;
    const auto cfg = read_json_file(kSource / "configs" / "train_k3.json");
    const auto family = family_from_json(cfg.at("family"));
    const auto eo = explore_from_json(cfg.at("explore"));
    const auto po = pipeline_from_json(cfg.at("train"));
    const auto store = explore(family, eo);
    std::string detail = fmt("store %.0f states from %.0f trials;", double(store.size()), double(eo.trials));
    for (auto kind : {PredictorKind::SingleMae, PredictorKind::SingleMaeSinr, PredictorKind::Dual}) {
        const auto tp = train_predictor(kind, store, family, po);
        const auto& a = tp.history.front().reward;
        const auto& b = tp.history.back().reward;
        const double se = std::sqrt(a.standard_error * a.standard_error + b.standard_error * b.standard_error);
        const bool ok = b.mean - a.mean > 3 * se;
        o.pass = o.pass && ok;
        detail += " " + std::string(to_string(kind)) + fmt(" %.3f->%.3f (3SE %.3f)", a.mean, b.mean, 3 * se);
        if (kind == PredictorKind::Dual) {
            res.dual = tp.dual;
            res.trained = true;
        }
    }
    // held-out states: drawn from a fresh stream and absent from the store
    const auto policy = dual_net_policy(res.dual);
    RngStream r(6, 0x686f6c64);
    double dual_sum = 0, grid_sum = 0;
    int states = 0;
    while (states < 100) {
        const auto sc = family.draw(r);
        if (store.find(encode_state(sc)) != nullptr) {
            continue;
        }
        dual_sum += expected_reward(sc, policy(sc));
        grid_sum += grid_best_action(sc, 0.02).reward;
        ++states;
    }
    const double ratio = dual_sum / grid_sum;
    o.pass = o.pass && ratio >= 0.9;
    o.detail = detail + fmt("; dual/grid on 100 held-out states %.4f (need >= 0.9)", ratio);
    return res;
}

const ResultRow& row(const ResultTable& t, const std::string& method, double x) {
    const auto* r = t.find(method, x);
    if (!r || r->status != "ok") {
        throw std::runtime_error("missing row " + method);
    }
    return *r;
}

// mean and SE of the per-episode difference a - b
std::pair<double, double> paired(const ResultRow& a, const ResultRow& b) {
    std::vector<double> d(a.episodes.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] = a.episodes[i] - b.episodes[i];
    }
    const auto est = summarize(d);
    return {est.mean, est.standard_error};
}

// 7. figure orderings
Outcome figure_orderings(const LearningResult& learned) {
    Outcome o;
    std::string detail;

    const auto fig4 = run_experiment(load_experiment(kSource / "configs" / "fig4.json"));
    // caching NOMA over uncached NOMA, each NOMA curve over the OMA curve
    // with the same caching
    const std::vector<std::pair<std::string, std::string>> dominance = {
        {"method1", "method1-nocache"}, {"method1", "oma"}, {"method1-nocache", "oma-nocache"}};
    int fails4 = 0;
    double min_z = std::numeric_limits<double>::infinity();
    const auto ks = fig4.config.at("sweep").at("values").get<std::vector<double>>();
    for (double k : ks) {
        for (const auto& [hi, lo] : dominance) {
            const auto [d, se] = paired(row(fig4, hi, k), row(fig4, lo, k));
            const double z = se > 0 ? d / se : (d > 0 ? INFINITY : 0);
            min_z = std::min(min_z, z);
            if (!(d > 3 * se)) {
                ++fails4;
                detail += hi + ">" + lo + fmt("@K=%.0f z=%.2f ", k, z);
            }
        }
    }
    detail += fmt("fig4 %.0f ordering violations (smallest paired z %.1f)", fails4, min_z);
    // reported only: caching also lifts OMA
    detail += " [oma over oma-nocache z:";
    for (double k : ks) {
        const auto [d, se] = paired(row(fig4, "oma", k), row(fig4, "oma-nocache", k));
        detail += fmt(" %.1f", se > 0 ? d / se : 0.0);
    }
    detail += "]";

    const auto fig7 = run_experiment(load_experiment(kSource / "configs" / "fig7.json"));
    const auto xs = fig7.config.at("sweep").at("values").get<std::vector<double>>();
    int fails7 = 0;
    for (const auto& m : fig7.config.at("methods").get<std::vector<std::string>>()) {
        for (std::size_t i = 1; i < xs.size(); ++i) {
            fails7 += !(row(fig7, m, xs[i]).value > row(fig7, m, xs[i - 1]).value);
        }
    }
    detail += fmt("; fig7 %.0f monotonicity violations", fails7);

    auto spec8 = load_experiment(kSource / "configs" / "fig8.json");
    if (learned.trained) {
        // the predictor trained under criterion 6
        const auto dir = fs::temp_directory_path() / "cnoma_acceptance";
        fs::create_directories(dir);
        save_checkpoint(dir / "value.ckpt", learned.dual.value, nullptr, "acceptance");
        save_checkpoint(dir / "order.ckpt", learned.dual.order, nullptr, "acceptance");
        spec8.predictor->value_checkpoint = (dir / "value.ckpt").string();
        spec8.predictor->order_checkpoint = (dir / "order.ckpt").string();
        spec8.predictor->pipeline.xi_scale = learned.dual.xi_scale;
    }
    const auto fig8 = run_experiment(spec8);
    double worst_ratio = INFINITY;
    int fails8 = 0;
    for (double s : spec8.sweep_values) {
        const double ratio = row(fig8, "method2-dualnet", s).value / row(fig8, "method1", s).value;
        worst_ratio = std::min(worst_ratio, ratio);
        fails8 += ratio < 0.9;
    }
    detail += fmt("; fig8 worst dual/method1 %.4f over %.0f skews", worst_ratio, double(spec8.sweep_values.size()));
    o.pass = fails4 == 0 && fails7 == 0 && fails8 == 0;
    o.detail = detail;
    return o;
}

// 8. threshold scaling
Outcome threshold_scaling() {
    Outcome o;
    int bad = 0;
    double worst = 0;
    double prev = -1;
    for (int i = 0; i < 1000; ++i) {
        const double eps = 1e-3 + (10.0 - 1e-3) * i / 999.0;
        const double id = adjust_threshold(eps, 1);
        worst = std::max(worst, std::abs(id - eps) / eps);
        bad += std::abs(id - eps) > 1e-12 * eps;
        bad += !(id > prev);
        prev = id;
        double last = id;
        for (std::size_t w = 2; w <= 8; ++w) {
            const double adj = adjust_threshold(eps, w);
            bad += !(adj > last);
            // round trip back to the full-band threshold
            const double back = std::expm1(std::log1p(adj) / static_cast<double>(w));
            worst = std::max(worst, std::abs(back - eps) / eps);
            bad += std::abs(back - eps) > 1e-12 * eps;
            last = adj;
        }
    }
    o.pass = bad == 0;
    o.detail = fmt("1000 thresholds x W=1..8, %.0f violations, worst relative error %.3g", bad, worst);
    return o;
}

} // namespace

int main() {
    using Clock = std::chrono::steady_clock;
    bool all = true;
    auto report = [&](int n, const std::function<Outcome()>& f) {
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = f();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        const double s = std::chrono::duration<double>(Clock::now() - t0).count();
        std::printf("criterion %d: %s (%.1fs) %s\n", n, o.pass ? "PASS" : "FAIL", s, o.detail.c_str());
        std::fflush(stdout);
        all = all && o.pass;
    };
    report(1, closed_form_optimality);
    report(2, analytic_vs_monte_carlo);
    report(3, kkt_split);
    report(4, exact_solver);
    report(5, gradients);
    LearningResult learned;
    report(6, [&] {
        learned = learning_pipeline();
        return learned.outcome;
    });
    report(7, [&] { return figure_orderings(learned); });
    report(8, threshold_scaling);
    return all ? 0 : 1;
}
