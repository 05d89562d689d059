#include "cnoma/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <future>
#include <numeric>

#include "cnoma/interpair.hpp"
#include "cnoma/minlp.hpp"
#include "cnoma/scenario_io.hpp"

namespace cnoma {

using nlohmann::json;

namespace {

constexpr const char* kNoCache = "-nocache";

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string base_method(const std::string& method) {
    return ends_with(method, kNoCache) ? method.substr(0, method.size() - std::string(kNoCache).size()) : method;
}

template <class T>
std::vector<T> cycled(const std::vector<T>& pattern, std::size_t n) {
    std::vector<T> out;
    if (pattern.empty()) {
        return out;
    }
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(pattern[i % pattern.size()]);
    }
    return out;
}

SystemScenario without_caches(SystemScenario sc) {
    for (auto& u : sc.users) {
        u.cache.clear();
    }
    return sc;
}

std::string metric_name(Metric m) {
    return m == Metric::SuccessProbability ? "success_probability" : "avg_success_users";
}

} // namespace

json explore_to_json(const ExploreOptions& o) {
    return json{{"trials", o.trials},
                {"a_max", o.search.a_max},
                {"t_eval", o.search.t_eval},
                {"capacity", o.capacity},
                {"seed", o.seed}};
}

ExploreOptions explore_from_json(const json& j) {
    ExploreOptions o;
    o.trials = j.value("trials", o.trials);
    o.search.a_max = j.value("a_max", o.search.a_max);
    o.search.t_eval = j.value("t_eval", o.search.t_eval);
    o.capacity = j.value("capacity", o.capacity);
    o.seed = j.value("seed", o.seed);
    return o;
}

json pipeline_to_json(const PipelineOptions& p) {
    return json{{"epochs", p.train.epochs},
                {"batch_size", p.train.batch_size},
                {"sinr_samples", p.train.sinr_samples},
                {"learning_rate", p.train.learning_rate},
                {"beta1", p.train.beta1},
                {"beta2", p.train.beta2},
                {"epsilon", p.train.epsilon},
                {"seed", p.train.seed},
                {"xi_scale", p.xi_scale},
                {"eval_episodes", p.eval_episodes},
                {"eval_t", p.eval_t},
                {"eval_seed", p.eval_seed},
                {"eval_every", p.eval_every}};
}

PipelineOptions pipeline_from_json(const json& j) {
    PipelineOptions p;
    p.train.epochs = j.value("epochs", p.train.epochs);
    p.train.batch_size = j.value("batch_size", p.train.batch_size);
    p.train.sinr_samples = j.value("sinr_samples", p.train.sinr_samples);
    p.train.learning_rate = j.value("learning_rate", p.train.learning_rate);
    p.train.beta1 = j.value("beta1", p.train.beta1);
    p.train.beta2 = j.value("beta2", p.train.beta2);
    p.train.epsilon = j.value("epsilon", p.train.epsilon);
    p.train.seed = j.value("seed", p.train.seed);
    p.xi_scale = j.value("xi_scale", p.xi_scale);
    p.eval_episodes = j.value("eval_episodes", p.eval_episodes);
    p.eval_t = j.value("eval_t", p.eval_t);
    p.eval_seed = j.value("eval_seed", p.eval_seed);
    p.eval_every = j.value("eval_every", p.eval_every);
    return p;
}


PowerAllocation baseline_equal(const SystemScenario& scenario) {
    scenario.validate();
    const std::size_t k = scenario.user_count();
    std::vector<double> alpha(k, 0.0);
    std::size_t active = 0;
    for (UserIndex i = 0; i < k; ++i) {
        active += scenario.users[i].self_cached() ? 0 : 1;
    }
    if (active == 0) {
        return PowerAllocation::full_bandwidth(std::move(alpha));
    }
    for (UserIndex i = 0; i < k; ++i) {
        if (!scenario.users[i].self_cached()) {
            alpha[i] = 1.0 / static_cast<double>(active);
        }
    }
    std::vector<UserIndex> priority(k);
    std::iota(priority.begin(), priority.end(), UserIndex{0});
    std::stable_sort(priority.begin(), priority.end(), [&](UserIndex a, UserIndex b) {
        return scenario.users[a].lambda * scenario.beta(a) > scenario.users[b].lambda * scenario.beta(b);
    });
    stagger_ties(alpha, priority);
    return PowerAllocation::full_bandwidth(std::move(alpha));
}

std::vector<UserIndex> mmf_cnr_order(const SystemScenario& scenario) {
    std::vector<UserIndex> order(scenario.user_count());
    std::iota(order.begin(), order.end(), UserIndex{0});
    std::stable_sort(order.begin(), order.end(), [&](UserIndex a, UserIndex b) {
        return scenario.users[a].lambda * scenario.beta(a) < scenario.users[b].lambda * scenario.beta(b);
    });
    return order;
}

std::vector<double> mmf_rates(const SystemScenario& scenario, std::span<const double> alpha) {
    const auto order = mmf_cnr_order(scenario);
    std::vector<double> rates(alpha.size(), 0.0);
    double stronger = 0.0;
    for (UserIndex u : order) {
        const double c = scenario.p_max / (scenario.users[u].lambda * scenario.beta(u));
        rates[u] = std::log2(1.0 + c * alpha[u] / (c * stronger + 1.0));
        stronger += alpha[u];
    }
    return rates;
}

PowerAllocation baseline_mmf(const SystemScenario& scenario) {
    scenario.validate();
    const std::size_t k = scenario.user_count();
    const auto order = mmf_cnr_order(scenario);
    std::vector<double> cnr(k);
    for (UserIndex u = 0; u < k; ++u) {
        cnr[u] = scenario.p_max / (scenario.users[u].lambda * scenario.beta(u));
    }
    // Powers for a common SINR x, filled from the strongest CNR downwards.
    auto powers = [&](double x) {
        std::vector<double> p(k, 0.0);
        double stronger = 0.0;
        for (UserIndex u : order) {
            p[u] = x * (stronger + 1.0 / cnr[u]);
            stronger += p[u];
        }
        return p;
    };
    auto total = [&](double x) {
        const auto p = powers(x);
        return std::accumulate(p.begin(), p.end(), 0.0);
    };
    double lo = 0.0;
    double hi = 1.0;
    while (total(hi) < 1.0) {
        hi *= 2.0;
    }
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (total(mid) < 1.0 ? lo : hi) = mid;
    }
    std::vector<double> alpha = powers(0.5 * (lo + hi));
    const double sum = std::accumulate(alpha.begin(), alpha.end(), 0.0);
    for (auto& a : alpha) {
        a /= sum;
    }
    std::vector<UserIndex> priority(order.rbegin(), order.rend());
    stagger_ties(alpha, priority);
    return PowerAllocation::full_bandwidth(std::move(alpha));
}

ScenarioFamily family_from_json(const json& j) {
    ScenarioFamily f;
    if (j.contains("mean_gains")) {
        for (double m : j.at("mean_gains").get<std::vector<double>>()) {
            f.lambdas.push_back(1.0 / m);
        }
    } else {
        f.lambdas = j.at("lambdas").get<std::vector<double>>();
    }
    if (j.contains("gain_variances")) {
        const auto var = j.at("gain_variances").get<std::vector<double>>();
        if (var.size() != f.lambdas.size()) {
            throw InvalidParameter("gain_variances must match the user count");
        }
        for (std::size_t i = 0; i < var.size(); ++i) {
            const double mean = 1.0 / f.lambdas[i];
            f.gain_shapes.push_back(mean * mean / var[i]);
        }
    } else if (j.contains("gain_shapes")) {
        f.gain_shapes = j.at("gain_shapes").get<std::vector<double>>();
    }
    if (j.contains("cache_capacity")) {
        const auto& c = j.at("cache_capacity");
        f.cache_capacity = c.is_array() ? c.get<std::vector<std::size_t>>()
                                        : std::vector<std::size_t>(f.lambdas.size(), c.get<std::size_t>());
    }
    f.library = j.contains("library") ? library_from_json(j.at("library")) : reference_library();
    f.p_max = j.value("p_max", 1.0);
    f.noise_power = j.value("noise_power", 1.0);
    if (j.contains("requests")) {
        const auto& r = j.at("requests");
        const std::string law = r.is_string() ? r.get<std::string>() : r.at("law").get<std::string>();
        if (law == "uniform") {
            f.requests = RequestLaw::Uniform;
        } else if (law == "zipf") {
            f.requests = RequestLaw::Zipf;
            f.zipf_skew = r.is_object() ? r.value("skew", 0.0) : 0.0;
        } else {
            throw InvalidParameter("unknown request law '" + law + "'");
        }
    }
    const std::string caching = j.value("caching", std::string("random"));
    if (caching == "random") {
        f.caching = CachePolicy::Random;
    } else if (caching == "lowest-index") {
        f.caching = CachePolicy::LowestIndex;
    } else if (caching == "none") {
        f.caching = CachePolicy::None;
    } else {
        throw InvalidParameter("unknown caching policy '" + caching + "'");
    }
    f.validate();
    return f;
}

json family_to_json(const ScenarioFamily& f) {
    json j{{"lambdas", f.lambdas},
           {"library", library_to_json(f.library)},
           {"p_max", f.p_max},
           {"noise_power", f.noise_power}};
    if (!f.gain_shapes.empty()) {
        j["gain_shapes"] = f.gain_shapes;
    }
    j["cache_capacity"] = f.cache_capacity;
    j["requests"] = f.requests == RequestLaw::Uniform ? json{{"law", "uniform"}}
                                                      : json{{"law", "zipf"}, {"skew", f.zipf_skew}};
    j["caching"] = f.caching == CachePolicy::Random        ? "random"
                   : f.caching == CachePolicy::LowestIndex ? "lowest-index"
                                                           : "none";
    return j;
}

bool is_known_method(const std::string& method) {
    static const std::vector<std::string> known = {"method1", "method2-exact", "method2-dualnet",
                                                   "oma",     "equal",         "mmf"};
    return std::find(known.begin(), known.end(), base_method(method)) != known.end();
}

void ExperimentSpec::validate() const {
    if (methods.empty()) {
        throw InvalidParameter("experiment '" + name + "' lists no methods");
    }
    for (const auto& m : methods) {
        if (!is_known_method(m)) {
            throw InvalidParameter("unknown method '" + m + "'");
        }
    }
    if (sweep_values.empty()) {
        throw InvalidParameter("experiment '" + name + "' has an empty sweep grid");
    }
    static const std::vector<std::string> vars = {"users", "p_max", "zipf_skew", "cache_capacity"};
    if (std::find(vars.begin(), vars.end(), sweep_variable) == vars.end()) {
        throw InvalidParameter("unknown sweep variable '" + sweep_variable + "'");
    }
    if (samples == 0) {
        throw InvalidParameter("samples must be at least 1");
    }
    const bool wants_dual = std::any_of(methods.begin(), methods.end(),
                                        [](const std::string& m) { return base_method(m) == "method2-dualnet"; });
    if (wants_dual && !predictor) {
        throw InvalidParameter("method2-dualnet needs a predictor section");
    }
    for (double v : sweep_values) {
        family_at(v).validate();
    }
}

ScenarioFamily ExperimentSpec::family_at(double value) const {
    ScenarioFamily f = family;
    std::size_t k = users ? users : family.users();
    if (sweep_variable == "users") {
        if (!(value >= 1.0) || value != std::floor(value)) {
            throw InvalidParameter("user-count sweep values must be positive integers");
        }
        k = static_cast<std::size_t>(value);
    }
    f.lambdas = cycled(family.lambdas, k);
    f.gain_shapes = cycled(family.gain_shapes, k);
    f.cache_capacity = cycled(family.cache_capacity, k);
    if (sweep_variable == "p_max") {
        f.p_max = value;
    } else if (sweep_variable == "zipf_skew") {
        f.requests = RequestLaw::Zipf;
        f.zipf_skew = value;
    } else if (sweep_variable == "cache_capacity") {
        if (!(value >= 0.0) || value != std::floor(value)) {
            throw InvalidParameter("cache-capacity sweep values must be nonnegative integers");
        }
        f.cache_capacity.assign(k, static_cast<std::size_t>(value));
    }
    return f;
}

ExperimentSpec experiment_from_json(const json& j) {
    ExperimentSpec s;
    s.source = j;
    s.name = j.value("name", s.name);
    s.family = family_from_json(j.at("family"));
    s.users = j.value("users", std::size_t{0});
    s.methods = j.at("methods").get<std::vector<std::string>>();
    const auto& sw = j.at("sweep");
    s.sweep_variable = sw.at("variable").get<std::string>();
    s.sweep_values = sw.at("values").get<std::vector<double>>();
    const std::string metric = j.value("metric", std::string("success_probability"));
    if (metric == "success_probability") {
        s.metric = Metric::SuccessProbability;
    } else if (metric == "avg_success_users") {
        s.metric = Metric::AvgSuccessUsers;
    } else {
        throw InvalidParameter("unknown metric '" + metric + "'");
    }
    const std::string est = j.value("estimator", std::string("conditional"));
    if (est == "conditional") {
        s.estimator = Estimator::Conditional;
    } else if (est == "sampled") {
        s.estimator = Estimator::Sampled;
    } else {
        throw InvalidParameter("unknown estimator '" + est + "'");
    }
    s.samples = j.value("samples", s.samples);
    s.seed = j.value("seed", s.seed);
    if (j.contains("predictor")) {
        const auto& p = j.at("predictor");
        PredictorSpec ps;
        ps.value_checkpoint = p.value("value_checkpoint", std::string());
        ps.order_checkpoint = p.value("order_checkpoint", std::string());
        if (p.contains("family")) {
            ps.family = family_from_json(p.at("family"));
        }
        if (p.contains("explore")) {
            ps.explore = explore_from_json(p.at("explore"));
        }
        if (p.contains("train")) {
            ps.pipeline = pipeline_from_json(p.at("train"));
        }
        s.predictor = ps;
    }
    return s;
}

json experiment_to_json(const ExperimentSpec& s) {
    json j{{"name", s.name},
           {"family", family_to_json(s.family)},
           {"users", s.users},
           {"methods", s.methods},
           {"sweep", {{"variable", s.sweep_variable}, {"values", s.sweep_values}}},
           {"metric", metric_name(s.metric)},
           {"estimator", s.estimator == Estimator::Conditional ? "conditional" : "sampled"},
           {"samples", s.samples},
           {"seed", s.seed}};
    if (s.predictor) {
        const auto& p = *s.predictor;
        j["predictor"] = {{"value_checkpoint", p.value_checkpoint},
                          {"order_checkpoint", p.order_checkpoint},
                          {"family", family_to_json(p.family)},
                          {"explore", explore_to_json(p.explore)},
                          {"train", pipeline_to_json(p.pipeline)}};
    }
    return j;
}

ExperimentSpec load_experiment(const std::filesystem::path& path) {
    try {
        ExperimentSpec spec = experiment_from_json(read_json_file(path));
        if (spec.predictor) {
            spec.predictor->base_dir = path.parent_path();
        }
        return spec;
    } catch (const json::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

std::string config_hash(const json& config) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : config.dump()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

bool ResultTable::all_ok() const {
    return std::all_of(rows.begin(), rows.end(), [](const ResultRow& r) { return r.status == "ok"; });
}

const ResultRow* ResultTable::find(const std::string& method, double sweep_value) const {
    for (const auto& r : rows) {
        if (r.method == method && r.sweep_value == sweep_value) {
            return &r;
        }
    }
    return nullptr;
}

PowerAllocation method_allocation(const std::string& method, const SystemScenario& scenario,
                                  const DualPredictor* dual) {
    const std::string m = base_method(method);
    if (m == "method1") {
        return plan_method1(scenario).allocation;
    }
    if (m == "oma") {
        return plan_oma(scenario).allocation;
    }
    if (m == "equal") {
        return baseline_equal(scenario);
    }
    if (m == "mmf") {
        return baseline_mmf(scenario);
    }
    if (m == "method2-exact") {
        const auto sol = solve_exact(MinlpInstance::from_scenario(scenario), scenario.p_max);
        return to_allocation(sol);
    }
    if (m == "method2-dualnet") {
        if (!dual) {
            throw InvalidParameter("method2-dualnet needs a trained predictor");
        }
        return action_allocation(dual_net_policy(*dual)(scenario));
    }
    throw InvalidParameter("unknown method '" + method + "'");
}

DualPredictor prepare_predictor(const PredictorSpec& spec) {
    if (!spec.value_checkpoint.empty() || !spec.order_checkpoint.empty()) {
        DualPredictor d;
        auto resolve = [&](const std::string& p) {
            const std::filesystem::path f(p);
            return f.is_relative() ? spec.base_dir / f : f;
        };
        d.value = load_checkpoint(resolve(spec.value_checkpoint)).net;
        d.order = load_checkpoint(resolve(spec.order_checkpoint)).net;
        d.xi_scale = spec.pipeline.xi_scale;
        return d;
    }
    const auto store = explore(spec.family, spec.explore);
    PipelineOptions p = spec.pipeline;
    p.eval_every = p.train.epochs + 1; // only the final epoch is scored
    return train_predictor(PredictorKind::Dual, store, spec.family, p).dual;
}

ResultTable run_experiment(const ExperimentSpec& spec) {
    spec.validate();
    ResultTable table;
    table.experiment = spec.name;
    table.config = experiment_to_json(spec);
    table.config_hash = config_hash(table.config);

    std::optional<DualPredictor> dual;
    std::string dual_error;
    if (spec.predictor) {
        const bool wants = std::any_of(spec.methods.begin(), spec.methods.end(), [](const std::string& m) {
            return base_method(m) == "method2-dualnet";
        });
        if (wants) {
            try {
                dual = prepare_predictor(*spec.predictor);
            } catch (const std::exception& e) {
                dual_error = e.what();
            }
        }
    }

    using Clock = std::chrono::steady_clock;
    const DualPredictor* dual_ptr = dual ? &*dual : nullptr;
    // One sweep point; rows in method order.
    auto run_point = [&](double value) {
        const ScenarioFamily fam = spec.family_at(value);
        const std::size_t nm = spec.methods.size();
        std::vector<std::vector<double>> values(nm);
        std::vector<std::string> status(nm, "ok");
        std::vector<double> seconds(nm, 0.0);
        for (std::size_t m = 0; m < nm; ++m) {
            if (base_method(spec.methods[m]) == "method2-dualnet" && !dual_ptr) {
                status[m] = "error: predictor unavailable: " + dual_error;
            }
        }
        std::vector<double> gains;
        for (std::size_t e = 0; e < spec.samples; ++e) {
            // common random numbers: episode e is the same at every sweep point
            RngStream rng(spec.seed, e);
            const SystemScenario sc = fam.draw(rng);
            if (spec.estimator == Estimator::Sampled) {
                gains = sample_channel_gains(sc, rng);
            }
            for (std::size_t m = 0; m < nm; ++m) {
                if (status[m] != "ok") {
                    continue;
                }
                const auto t0 = Clock::now();
                const std::string& method = spec.methods[m];
                const SystemScenario target = ends_with(method, kNoCache) ? without_caches(sc) : sc;
                double x = 0.0;
                try {
                    const auto alloc = method_allocation(method, target, dual_ptr);
                    if (spec.estimator == Estimator::Conditional) {
                        x = spec.metric == Metric::SuccessProbability ? exact_success_probability(target, alloc)
                                                                      : exact_success_count(target, alloc);
                    } else {
                        const auto out = sic_decode(gains, alloc, target);
                        x = spec.metric == Metric::SuccessProbability ? (out.all() ? 1.0 : 0.0)
                                                                      : static_cast<double>(out.success_count);
                    }
                } catch (const InfeasibleProblem&) {
                    x = 0.0; // no allocation decodes every user
                } catch (const std::exception& ex) {
                    status[m] = std::string("error: ") + ex.what();
                }
                values[m].push_back(x);
                seconds[m] += std::chrono::duration<double>(Clock::now() - t0).count();
            }
        }
        std::vector<ResultRow> rows;
        for (std::size_t m = 0; m < nm; ++m) {
            ResultRow row;
            row.experiment = spec.name;
            row.method = spec.methods[m];
            row.sweep_variable = spec.sweep_variable;
            row.sweep_value = value;
            row.metric = metric_name(spec.metric);
            row.status = status[m];
            row.config_hash = table.config_hash;
            row.wall_seconds = seconds[m];
            if (row.status == "ok") {
                const auto est = summarize(values[m]);
                row.value = est.mean;
                row.standard_error = est.standard_error;
                row.samples = est.samples;
                row.episodes = std::move(values[m]);
            }
            rows.push_back(std::move(row));
        }
        return rows;
    };

    std::vector<std::future<std::vector<ResultRow>>> points;
    for (double value : spec.sweep_values) {
        points.push_back(std::async(std::launch::async, run_point, value));
    }
    for (auto& f : points) {
        for (auto& row : f.get()) {
            table.rows.push_back(std::move(row));
        }
    }
    return table;
}

std::string results_csv(const ResultTable& table) {
    std::string out = "experiment,method,sweep_variable,sweep_value,metric,value,se,samples,status,config_hash\n";
    for (const auto& r : table.rows) {
        std::string status = r.status;
        std::replace(status.begin(), status.end(), ',', ';');
        std::replace(status.begin(), status.end(), '\n', ' ');
        out += r.experiment + "," + r.method + "," + r.sweep_variable + "," + fmt(r.sweep_value) + "," + r.metric +
               "," + fmt(r.value) + "," + fmt(r.standard_error) + "," + std::to_string(r.samples) + "," + status +
               "," + r.config_hash + "\n";
    }
    return out;
}

void emit_plotdata(const ResultTable& table, const std::filesystem::path& dir) {
    if (table.rows.empty()) {
        throw InvalidParameter("result table is empty");
    }
    const std::string base = table.experiment;
    write_text_file(dir / (base + ".csv"), results_csv(table));
    std::string timing = "method,sweep_value,wall_seconds\n";
    for (const auto& r : table.rows) {
        timing += r.method + "," + fmt(r.sweep_value) + "," + fmt(r.wall_seconds) + "\n";
    }
    write_text_file(dir / (base + ".timing.csv"), timing);
    const json manifest{{"experiment", table.experiment},
                        {"config_hash", table.config_hash},
                        {"config", table.config},
                        {"csv", base + ".csv"},
                        {"timing", base + ".timing.csv"},
                        {"rows", table.rows.size()},
                        {"columns",
                         {"experiment", "method", "sweep_variable", "sweep_value", "metric", "value", "se", "samples",
                          "status", "config_hash"}}};
    write_text_file(dir / (base + ".manifest.json"), manifest.dump(2) + "\n");
}

} // namespace cnoma
