// Command-line front end for the cnoma library.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cnoma/bench.hpp"
#include "cnoma/core_model.hpp"
#include "cnoma/minlp.hpp"
#include "cnoma/mlp.hpp"
#include "cnoma/rl.hpp"
#include "cnoma/scenario_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cnoma;

namespace {

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> samples;
    std::string out = ".";
    std::vector<std::string> methods;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool needs_config = true) {
    auto* c = cmd->add_option("--config", f.config, "JSON configuration file");
    if (needs_config) {
        c->required()->check(CLI::ExistingFile);
    }
    cmd->add_option("--seed", f.seed, "Override the configured seed");
    cmd->add_option("--samples", f.samples, "Override the configured sample count");
    cmd->add_option("--out", f.out, "Output directory")->capture_default_str();
    cmd->add_option("--method", f.methods, "Comma-separated method list")->delimiter(',');
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

fs::path relative_to(const fs::path& config, const std::string& p) {
    const fs::path path(p);
    return path.is_relative() ? config.parent_path() / path : path;
}

// Either {"family": {...}} or the family object itself.
ScenarioFamily family_of(const json& j) {
    if (j.contains("family")) {
        return family_from_json(j.at("family"));
    }
    return j.contains("lambdas") || j.contains("mean_gains") ? family_from_json(j) : reference_family_k3();
}

int cmd_simulate(const CommonFlags& f) {
    const SystemScenario sc = load_scenario(f.config);
    const std::vector<std::string> methods = f.methods.empty() ? std::vector<std::string>{"method1"} : f.methods;
    const std::size_t samples = f.samples.value_or(100000);
    const std::uint64_t seed = f.seed.value_or(sc.rng_seed);
    std::string csv = "method,exact_success_probability,mc_success_probability,se,exact_avg_success_users,"
                      "mc_avg_success_users,se_users,samples,status\n";
    bool ok = true;
    for (std::size_t m = 0; m < methods.size(); ++m) {
        const std::string& method = methods[m];
        try {
            if (!is_known_method(method) || method.find("dualnet") != std::string::npos) {
                throw InvalidParameter("simulate supports method1, method2-exact, oma, equal, mmf");
            }
            SystemScenario target = sc;
            if (method.size() > 8 && method.ends_with("-nocache")) {
                for (auto& u : target.users) {
                    u.cache.clear();
                }
            }
            const auto alloc = method_allocation(method, target);
            RngStream rng_p(seed, m, 0);
            RngStream rng_c(seed, m, 1);
            const auto p = estimate_success_probability(target, alloc, samples, rng_p);
            const auto c = estimate_success_count(target, alloc, samples, rng_c);
            csv += method + "," + fmt(exact_success_probability(target, alloc)) + "," + fmt(p.mean) + "," +
                   fmt(p.standard_error) + "," + fmt(exact_success_count(target, alloc)) + "," + fmt(c.mean) + "," +
                   fmt(c.standard_error) + "," + std::to_string(samples) + ",ok\n";
        } catch (const std::exception& e) {
            ok = false;
            std::string msg = e.what();
            std::replace(msg.begin(), msg.end(), ',', ';');
            csv += method + ",,,,,,,0,error: " + msg + "\n";
            std::cerr << method << ": " << e.what() << "\n";
        }
    }
    write_text_file(fs::path(f.out) / "simulate.csv", csv);
    std::cout << csv;
    return ok ? 0 : 1;
}

int cmd_solve(const CommonFlags& f) {
    const SystemScenario sc = load_scenario(f.config);
    const auto inst = MinlpInstance::from_scenario(sc);
    const auto sol = solve_exact(inst, sc.p_max);
    const auto alloc = to_allocation(sol);
    const json out{{"order", sol.order},
                   {"alpha", sol.alpha},
                   {"allocation", alloc.alphas},
                   {"objective", sol.value},
                   {"success_probability", sol.success_probability},
                   {"orderings_enumerated", sol.orderings_enumerated},
                   {"feasible_orderings", sol.feasible_orderings}};
    write_text_file(fs::path(f.out) / "solve.json", out.dump(2) + "\n");
    std::cout << out.dump(2) << "\n";
    return 0;
}

ExploreOptions explore_options(const json& j, const CommonFlags& f) {
    ExploreOptions o = j.contains("explore") ? explore_from_json(j.at("explore")) : ExploreOptions{};
    if (f.seed) {
        o.seed = *f.seed;
    }
    if (f.samples) {
        o.trials = *f.samples;
    }
    return o;
}

int cmd_explore(const CommonFlags& f) {
    const json j = read_json_file(f.config);
    const auto family = family_of(j);
    const auto opts = explore_options(j, f);
    const auto store = explore(family, opts);
    const fs::path path = fs::path(f.out) / "store.jsonl";
    store.save(path);
    std::cout << "stored " << store.size() << " states from " << opts.trials << " trials in " << path.string()
              << "\n";
    return 0;
}

PipelineOptions pipeline_options(const json& j, const CommonFlags& f) {
    PipelineOptions p = j.contains("train") ? pipeline_from_json(j.at("train")) : PipelineOptions{};
    if (f.seed) {
        p.train.seed = *f.seed;
    }
    return p;
}

PredictorKind predictor_kind(const std::string& name) {
    if (name == "dual") {
        return PredictorKind::Dual;
    }
    if (name == "single-mae") {
        return PredictorKind::SingleMae;
    }
    if (name == "single-mae-sinr") {
        return PredictorKind::SingleMaeSinr;
    }
    throw InvalidParameter("unknown predictor '" + name + "' (dual, single-mae, single-mae-sinr)");
}

int cmd_train(const CommonFlags& f) {
    const fs::path cfg(f.config);
    const json j = read_json_file(cfg);
    const auto family = family_of(j);
    ExperienceStore store;
    if (j.contains("store")) {
        store = ExperienceStore::load(relative_to(cfg, j.at("store").get<std::string>()));
    } else {
        CommonFlags ef = f;
        ef.samples.reset();
        ef.seed.reset();
        store = explore(family, explore_options(j, ef));
    }
    const auto pipeline = pipeline_options(j, f);
    std::vector<std::string> kinds = f.methods;
    if (kinds.empty()) {
        kinds = j.value("predictors", std::vector<std::string>{"dual"});
    }
    const fs::path out(f.out);
    for (const auto& name : kinds) {
        const auto kind = predictor_kind(name);
        const auto trained = train_predictor(kind, store, family, pipeline);
        const json meta{{"predictor", name}, {"store_size", store.size()}, {"config", j}};
        if (kind == PredictorKind::Dual) {
            save_checkpoint(out / (name + ".value.ckpt"), trained.dual.value, nullptr, meta.dump());
            save_checkpoint(out / (name + ".order.ckpt"), trained.dual.order, nullptr, meta.dump());
        } else {
            save_checkpoint(out / (name + ".ckpt"), trained.single, nullptr, meta.dump());
        }
        write_text_file(out / (name + ".metrics.csv"), metrics_csv(trained.history));
        const auto& first = trained.history.front();
        const auto& last = trained.history.back();
        std::cout << name << ": avg success users " << fmt(first.reward.mean) << " -> " << fmt(last.reward.mean)
                  << " (se " << fmt(last.reward.standard_error) << ")\n";
    }
    return 0;
}

int cmd_evaluate(const CommonFlags& f) {
    const fs::path cfg(f.config);
    const json j = read_json_file(cfg);
    const auto family = family_of(j);
    const std::size_t episodes = f.samples.value_or(j.value("episodes", std::size_t{200}));
    const std::size_t t_eval = j.value("t_eval", std::size_t{200});
    const std::uint64_t seed = f.seed.value_or(j.value("seed", std::uint64_t{1}));
    std::vector<std::string> policies = f.methods;
    if (policies.empty()) {
        policies = j.value("policies", std::vector<std::string>{"dualnet", "random", "grid"});
    }
    std::optional<DualPredictor> dual;
    std::optional<Mlp> single;
    if (j.contains("predictor")) {
        const auto& p = j.at("predictor");
        if (p.contains("value_checkpoint")) {
            DualPredictor d;
            d.value = load_checkpoint(relative_to(cfg, p.at("value_checkpoint").get<std::string>())).net;
            d.order = load_checkpoint(relative_to(cfg, p.at("order_checkpoint").get<std::string>())).net;
            d.xi_scale = p.value("xi_scale", 2.0);
            dual = std::move(d);
        }
        if (p.contains("single_checkpoint")) {
            single = load_checkpoint(relative_to(cfg, p.at("single_checkpoint").get<std::string>())).net;
        }
    }
    std::string csv = "policy,avg_success_users,se,episodes,t_eval,status\n";
    bool ok = true;
    for (const auto& name : policies) {
        try {
            Policy policy;
            if (name == "dualnet") {
                if (!dual) {
                    throw InvalidParameter("no dual predictor checkpoints configured");
                }
                policy = dual_net_policy(*dual);
            } else if (name == "single") {
                if (!single) {
                    throw InvalidParameter("no single predictor checkpoint configured");
                }
                policy = single_net_policy(*single);
            } else if (name == "random") {
                policy = random_policy(seed);
            } else if (name == "grid") {
                policy = grid_policy();
            } else {
                throw InvalidParameter("unknown policy '" + name + "' (dualnet, single, random, grid)");
            }
            const auto est = evaluate_policy(policy, family, episodes, t_eval, seed);
            csv += name + "," + fmt(est.mean) + "," + fmt(est.standard_error) + "," + std::to_string(episodes) + "," +
                   std::to_string(t_eval) + ",ok\n";
        } catch (const std::exception& e) {
            ok = false;
            std::string msg = e.what();
            std::replace(msg.begin(), msg.end(), ',', ';');
            csv += name + ",,,0," + std::to_string(t_eval) + ",error: " + msg + "\n";
            std::cerr << name << ": " << e.what() << "\n";
        }
    }
    write_text_file(fs::path(f.out) / "evaluate.csv", csv);
    std::cout << csv;
    return ok ? 0 : 1;
}

int cmd_sweep(const CommonFlags& f) {
    ExperimentSpec spec = load_experiment(f.config);
    if (f.seed) {
        spec.seed = *f.seed;
    }
    if (f.samples) {
        spec.samples = *f.samples;
    }
    if (!f.methods.empty()) {
        spec.methods = f.methods;
    }
    const auto table = run_experiment(spec);
    emit_plotdata(table, f.out);
    for (const auto& r : table.rows) {
        std::cout << r.method << " @ " << r.sweep_variable << "=" << fmt(r.sweep_value) << ": " << fmt(r.value)
                  << " (se " << fmt(r.standard_error) << ") " << r.status << "\n";
    }
    return table.all_ok() ? 0 : 1;
}

int cmd_gradcheck(const CommonFlags& f) {
    const std::uint64_t seed = f.seed.value_or(1);
    const std::size_t nets = f.samples.value_or(20);
    constexpr double tolerance = 1e-4;
    double worst = 0.0;
    std::size_t checked = 0;
    for (std::size_t n = 0; n < nets; ++n) {
        RngStream rng(seed, 0x67726164, n);
        const std::size_t k = 2 + rng.below(3);
        const std::vector<std::size_t> dims = {k * k, 4 + rng.below(5), 3 + rng.below(4), k};
        for (auto out : {OutputActivation::Softmax, OutputActivation::Sigmoid}) {
            Mlp net(dims, seed + n, out);
            // generic point: zero biases can park a dead ReLU layer on its kink
            for (auto& p : net.parameters()) {
                p = 2.0 * rng.uniform() - 1.0;
            }
            std::vector<double> input(k * k);
            for (auto& x : input) {
                x = rng.uniform();
            }
            std::vector<double> target(k);
            for (auto& t : target) {
                t = rng.uniform();
            }
            std::vector<std::uint8_t> mask(k, 1);
            std::vector<double> lambdas(k, 1.0), betas(k, 1.0);
            for (std::size_t i = 0; i < k; ++i) {
                lambdas[i] = 0.5 + rng.uniform();
            }
            const auto ctx = make_sinr_context(lambdas, betas, 1.0, 32, seed + n);
            for (auto loss : {LossKind::Mae, LossKind::MaeSinr}) {
                const auto rep = gradient_check(net, input, mask, target, loss, &ctx);
                worst = std::max(worst, rep.max_relative_error);
                checked += rep.checked;
            }
        }
    }
    const bool pass = worst <= tolerance;
    std::cout << "gradcheck: " << checked << " entries, max relative error " << fmt(worst) << " -> "
              << (pass ? "PASS" : "FAIL") << "\n";
    return pass ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cache-aided NOMA power allocation toolkit"};
    app.require_subcommand(1);
    CommonFlags simulate, solve, explore_f, train, evaluate, sweep, gradcheck;
    auto* c_sim = app.add_subcommand("simulate", "Evaluate methods on one scenario file");
    add_common(c_sim, simulate);
    auto* c_solve = app.add_subcommand("solve", "Exact full-bandwidth solve of one scenario file");
    add_common(c_solve, solve);
    auto* c_explore = app.add_subcommand("explore", "Build an experience store");
    add_common(c_explore, explore_f);
    auto* c_train = app.add_subcommand("train", "Train predictors and write checkpoints");
    add_common(c_train, train);
    auto* c_eval = app.add_subcommand("evaluate", "Evaluate allocation policies on a scenario family");
    add_common(c_eval, evaluate);
    auto* c_sweep = app.add_subcommand("sweep", "Run an experiment spec and write plot data");
    add_common(c_sweep, sweep);
    auto* c_grad = app.add_subcommand("gradcheck", "Check backprop against finite differences");
    add_common(c_grad, gradcheck, false);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*c_sim) {
            return cmd_simulate(simulate);
        }
        if (*c_solve) {
            return cmd_solve(solve);
        }
        if (*c_explore) {
            return cmd_explore(explore_f);
        }
        if (*c_train) {
            return cmd_train(train);
        }
        if (*c_eval) {
            return cmd_evaluate(evaluate);
        }
        if (*c_sweep) {
            return cmd_sweep(sweep);
        }
        if (*c_grad) {
            return cmd_gradcheck(gradcheck);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
