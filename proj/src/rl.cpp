#include "cnoma/rl.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "cnoma/scenario_io.hpp"

namespace cnoma {

namespace {

constexpr std::uint64_t kExploreStream = 0x6578706c;
constexpr std::uint64_t kEvalStream = 0x6576616c;
constexpr std::uint64_t kShuffleStream = 0x73687566;
constexpr std::uint64_t kSinrStream = 0x73696e72;

std::vector<double> normalized(std::vector<double> v) {
    const double total = std::accumulate(v.begin(), v.end(), 0.0);
    if (total > 0.0) {
        for (auto& x : v) {
            x /= total;
        }
    } else {
        std::fill(v.begin(), v.end(), 0.0);
    }
    return v;
}

std::size_t sample_index(std::span<const double> cdf, double u) {
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u * cdf.back());
    return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
}

// Fraction of users succeeding, averaged over gain draws.
double mean_successes(const SicEvaluator& ev, const std::vector<std::vector<double>>& draws) {
    const auto thr = ev.gain_thresholds();
    std::size_t hits = 0;
    for (const auto& g : draws) {
        for (std::size_t i = 0; i < thr.size(); ++i) {
            hits += g[i] >= thr[i] ? 1 : 0;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(draws.size());
}

std::vector<std::vector<double>> draw_gains(const SystemScenario& scenario, std::size_t count, RngStream& rng) {
    std::vector<std::vector<double>> draws(count, std::vector<double>(scenario.user_count()));
    for (auto& g : draws) {
        sample_channel_gains(scenario, rng, g);
    }
    return draws;
}

// Calls visit(point) for every composition of `total` into `parts` nonnegative integers.
template <class Visit>
void compositions(std::size_t parts, std::size_t total, std::vector<std::size_t>& point, std::size_t at,
                  Visit&& visit) {
    if (at + 1 == parts) {
        point[at] = total;
        visit(point);
        return;
    }
    for (std::size_t v = 0; v <= total; ++v) {
        point[at] = v;
        compositions(parts, total - v, point, at + 1, visit);
    }
}

std::vector<double> sorted_descending(std::span<const double> v) {
    std::vector<double> s(v.begin(), v.end());
    std::sort(s.begin(), s.end(), std::greater<>());
    return s;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

} // namespace

StateVector encode_state(std::span<const UserProfile> users, const FileLibrary& library) {
    const std::size_t k = users.size();
    StateVector s(k * k, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        if (users[i].self_cached()) {
            continue;
        }
        for (std::size_t j = 0; j < k; ++j) {
            const FileIndex f = users[j].request;
            s[i * k + j] = users[i].has_cached(f) ? 0.0 : library.threshold(f);
        }
    }
    return s;
}

StateVector encode_state(const SystemScenario& scenario) { return encode_state(scenario.users, scenario.library); }

std::vector<std::uint8_t> state_mask(const StateVector& state) {
    const auto k = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(state.size()))));
    if (k * k != state.size()) {
        throw InvalidParameter("state length is not a perfect square");
    }
    std::vector<std::uint8_t> mask(k);
    for (std::size_t i = 0; i < k; ++i) {
        mask[i] = state[i * k + i] > 0.0 ? 1 : 0;
    }
    return mask;
}

std::vector<double> zipf_pmf(std::size_t files, double skew) {
    if (files == 0) {
        throw InvalidParameter("Zipf law needs at least one file");
    }
    if (!(skew >= 0.0)) {
        throw InvalidParameter("Zipf skew must be nonnegative");
    }
    std::vector<double> p(files);
    for (std::size_t k = 0; k < files; ++k) {
        p[k] = std::pow(static_cast<double>(k + 1), -skew);
    }
    return normalized(std::move(p));
}

void ScenarioFamily::validate() const {
    if (lambdas.empty()) {
        throw InvalidParameter("scenario family has no users");
    }
    if (!gain_shapes.empty() && gain_shapes.size() != lambdas.size()) {
        throw InvalidParameter("gain_shapes must match the user count");
    }
    if (!cache_capacity.empty() && cache_capacity.size() != lambdas.size()) {
        throw InvalidParameter("cache_capacity must match the user count");
    }
    library.validate();
    base().validate();
}

SystemScenario ScenarioFamily::base() const {
    SystemScenario sc;
    sc.library = library;
    sc.p_max = p_max;
    sc.noise_power = noise_power;
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        UserProfile u;
        u.lambda = lambdas[i];
        if (!gain_shapes.empty()) {
            u.gain_shape = gain_shapes[i];
        }
        u.cache_capacity = cache_capacity.empty() ? 0 : cache_capacity[i];
        sc.users.push_back(u);
    }
    return sc;
}

SystemScenario ScenarioFamily::draw(RngStream& rng) const {
    SystemScenario sc = base();
    const std::size_t files = library.size();
    for (auto& u : sc.users) {
        const std::size_t cap = std::min(u.cache_capacity, files);
        switch (caching) {
        case CachePolicy::None:
            break;
        case CachePolicy::LowestIndex:
            for (FileIndex f = 0; f < cap; ++f) {
                u.cache.push_back(f);
            }
            break;
        case CachePolicy::Random: {
            const auto count = static_cast<std::size_t>(rng.below(cap + 1));
            std::vector<FileIndex> pool(files);
            std::iota(pool.begin(), pool.end(), FileIndex{0});
            for (std::size_t c = 0; c < count; ++c) {
                const auto pick = c + static_cast<std::size_t>(rng.below(files - c));
                std::swap(pool[c], pool[pick]);
                u.cache.push_back(pool[c]);
            }
            std::sort(u.cache.begin(), u.cache.end());
            break;
        }
        }
    }
    std::vector<double> cdf;
    if (requests == RequestLaw::Zipf) {
        const auto p = zipf_pmf(files, zipf_skew);
        cdf.resize(files);
        std::partial_sum(p.begin(), p.end(), cdf.begin());
    }
    for (auto& u : sc.users) {
        u.request = requests == RequestLaw::Uniform ? static_cast<FileIndex>(rng.below(files))
                                                    : sample_index(cdf, rng.uniform());
    }
    return sc;
}

FileLibrary reference_library() { return FileLibrary::evenly_spaced(38, 0.016, 0.016); }

ScenarioFamily reference_family_k3() {
    ScenarioFamily f;
    f.lambdas = {1.0, 0.5, 1.0 / 3.0};
    f.cache_capacity = {2, 2, 2};
    f.library = reference_library();
    return f;
}

PowerAllocation action_allocation(std::span<const double> alpha) {
    std::vector<double> a(alpha.begin(), alpha.end());
    stagger_ties(a);
    return PowerAllocation::full_bandwidth(std::move(a));
}

double expected_reward(const SystemScenario& scenario, std::span<const double> alpha) {
    return exact_success_count(scenario, action_allocation(alpha));
}

ActionResult find_best_action(const SystemScenario& scenario, const SearchOptions& options, RngStream& rng) {
    if (options.a_max == 0 || options.t_eval == 0) {
        throw InvalidParameter("A_max and T_eval must be positive");
    }
    const std::size_t k = scenario.user_count();
    std::vector<std::uint8_t> need(k);
    bool any = false;
    for (std::size_t i = 0; i < k; ++i) {
        need[i] = scenario.users[i].self_cached() ? 0 : 1;
        any = any || need[i];
    }
    if (!any) {
        return {std::vector<double>(k, 0.0), static_cast<double>(k)};
    }
    const auto draws = draw_gains(scenario, options.t_eval, rng);
    ActionResult best;
    best.reward = -1.0;
    for (std::size_t j = 0; j < options.a_max; ++j) {
        std::vector<double> alpha(k, 0.0);
        for (std::size_t i = 0; i < k; ++i) {
            const double u = rng.uniform_open_low();
            alpha[i] = need[i] ? u : 0.0;
        }
        alpha = normalized(std::move(alpha));
        const SicEvaluator ev(scenario, action_allocation(alpha));
        const double r = mean_successes(ev, draws);
        if (r > best.reward) {
            best.reward = r;
            best.alpha = std::move(alpha);
        }
    }
    return best;
}

ActionResult grid_best_action(const SystemScenario& scenario, double step) {
    if (!(step > 0.0 && step <= 1.0)) {
        throw InvalidParameter("grid step must lie in (0, 1]");
    }
    const std::size_t k = scenario.user_count();
    std::vector<UserIndex> active;
    for (UserIndex i = 0; i < k; ++i) {
        if (!scenario.users[i].self_cached()) {
            active.push_back(i);
        }
    }
    if (active.empty()) {
        return {std::vector<double>(k, 0.0), static_cast<double>(k)};
    }
    const auto n = static_cast<std::size_t>(std::llround(1.0 / step));
    ActionResult best;
    best.reward = -1.0;
    std::vector<std::size_t> point(active.size());
    std::vector<double> alpha(k, 0.0);
    compositions(active.size(), n, point, 0, [&](const std::vector<std::size_t>& p) {
        for (std::size_t a = 0; a < active.size(); ++a) {
            alpha[active[a]] = static_cast<double>(p[a]) / static_cast<double>(n);
        }
        const double r = expected_reward(scenario, alpha);
        if (r > best.reward) {
            best.reward = r;
            best.alpha = alpha;
        }
    });
    return best;
}

ExperienceStore::Key ExperienceStore::key(const StateVector& state) {
    Key k(state.size());
    for (std::size_t i = 0; i < state.size(); ++i) {
        k[i] = std::llround(state[i] * 1e12);
    }
    return k;
}

const StoreEntry* ExperienceStore::find(const StateVector& state) const {
    const auto it = index_.find(key(state));
    return it == index_.end() ? nullptr : &entries_[it->second];
}

bool ExperienceStore::offer(const StateVector& state, std::vector<double> action, double reward) {
    auto k = key(state);
    const auto it = index_.find(k);
    if (it == index_.end()) {
        if (entries_.size() >= capacity_) {
            return false;
        }
        index_.emplace(std::move(k), entries_.size());
        entries_.push_back({state, std::move(action), reward});
        return true;
    }
    auto& e = entries_[it->second];
    if (reward > e.reward) {
        e.action = std::move(action);
        e.reward = reward;
        return true;
    }
    return false;
}

void ExperienceStore::save(const std::filesystem::path& path) const {
    std::ostringstream out;
    for (const auto& e : entries_) {
        nlohmann::json j;
        j["state"] = e.state;
        j["action"] = e.action;
        j["reward"] = e.reward;
        out << j.dump() << '\n';
    }
    write_text_file(path, out.str());
}

ExperienceStore ExperienceStore::load(const std::filesystem::path& path, std::size_t capacity) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error(path.string() + ": cannot open experience store");
    }
    ExperienceStore store(capacity);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            store.offer(j.at("state").get<StateVector>(), j.at("action").get<std::vector<double>>(),
                        j.at("reward").get<double>());
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return store;
}

ExperienceStore explore(const ScenarioFamily& family, const ExploreOptions& options) {
    family.validate();
    ExperienceStore store(options.capacity);
    for (std::size_t t = 0; t < options.trials; ++t) {
        RngStream rng(options.seed, kExploreStream, t);
        const SystemScenario sc = family.draw(rng);
        const StateVector state = encode_state(sc);
        auto best = find_best_action(sc, options.search, rng);
        store.offer(state, std::move(best.alpha), best.reward);
    }
    return store;
}

TrainingSet build_single_set(const ExperienceStore& store) {
    if (store.empty()) {
        throw InvalidParameter("experience store is empty");
    }
    TrainingSet set;
    for (const auto& e : store.entries()) {
        set.inputs.push_back(e.state);
        set.targets.push_back(e.action);
        set.masks.push_back(state_mask(e.state));
    }
    return set;
}

TrainingSets build_training_sets(const ExperienceStore& store, double xi_scale) {
    if (!(xi_scale > 1.0)) {
        throw InvalidParameter("xi_scale must exceed 1");
    }
    if (store.empty()) {
        throw InvalidParameter("experience store is empty");
    }
    TrainingSets sets;
    for (const auto& e : store.entries()) {
        const auto mask = state_mask(e.state);
        sets.value.inputs.push_back(e.state);
        sets.value.targets.push_back(sorted_descending(e.action));
        sets.value.masks.push_back(sorted_mask(mask));
        std::vector<double> scaled = e.action;
        for (auto& v : scaled) {
            v *= xi_scale;
        }
        sets.order.inputs.push_back(e.state);
        sets.order.targets.push_back(std::move(scaled));
        sets.order.masks.push_back(mask);
    }
    return sets;
}

double train_epoch(Mlp& net, AdamState& adam, const TrainingSet& data, const TrainOptions& options,
                   std::size_t epoch, const ScenarioFamily& family) {
    if (data.size() == 0) {
        throw InvalidParameter("training set is empty");
    }
    const std::size_t batch = std::max<std::size_t>(options.batch_size, 1);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    RngStream shuffle(options.seed, kShuffleStream, epoch);
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.below(i))]);
    }
    std::vector<double> betas;
    if (options.loss == LossKind::MaeSinr) {
        const auto base = family.base();
        for (UserIndex i = 0; i < base.user_count(); ++i) {
            betas.push_back(base.beta(i));
        }
    }
    double total_loss = 0.0;
    std::vector<double> grad(net.parameters().size());
    for (std::size_t start = 0, b = 0; start < order.size(); start += batch, ++b) {
        const std::size_t end = std::min(order.size(), start + batch);
        SinrContext ctx;
        if (options.loss == LossKind::MaeSinr) {
            const std::uint64_t ctx_seed = RngStream(options.seed, kSinrStream, epoch).split(b).next_u64();
            ctx = make_sinr_context(family.lambdas, betas, family.p_max, options.sinr_samples, ctx_seed);
        }
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t s = start; s < end; ++s) {
            const std::size_t idx = order[s];
            const auto g = backprop(net, data.inputs[idx], data.masks[idx], data.targets[idx], options.loss,
                                    options.loss == LossKind::MaeSinr ? &ctx : nullptr);
            total_loss += g.loss;
            for (std::size_t p = 0; p < grad.size(); ++p) {
                grad[p] += g.values[p];
            }
        }
        const double inv = 1.0 / static_cast<double>(end - start);
        for (auto& v : grad) {
            v *= inv;
        }
        adam_step(net, grad, adam);
    }
    return total_loss / static_cast<double>(data.size());
}

std::vector<std::size_t> ranks_descending(std::span<const double> v) {
    const auto order = descending_order(v);
    std::vector<std::size_t> rank(v.size());
    for (std::size_t r = 0; r < order.size(); ++r) {
        rank[order[r]] = r;
    }
    return rank;
}

std::vector<std::uint8_t> sorted_mask(std::span<const std::uint8_t> mask) {
    std::vector<std::uint8_t> out(mask.size(), 0);
    const auto on = static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](auto m) { return m != 0; }));
    std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(on), 1);
    return out;
}

std::vector<double> predict_dual(std::span<const double> value_out, std::span<const double> order_out,
                                 std::span<const std::uint8_t> mask) {
    if (value_out.size() != order_out.size() || (!mask.empty() && mask.size() != value_out.size())) {
        throw InvalidParameter("dual predictor outputs and mask must have equal length");
    }
    const auto values = sorted_descending(value_out);
    const auto rank = ranks_descending(order_out);
    std::vector<double> alpha(values.size());
    for (std::size_t i = 0; i < alpha.size(); ++i) {
        alpha[i] = (mask.empty() || mask[i]) ? values[rank[i]] : 0.0;
    }
    return normalized(std::move(alpha));
}

std::vector<double> predict_dual(const DualPredictor& pred, const StateVector& state,
                                 std::span<const std::uint8_t> mask) {
    const auto vmask = sorted_mask(mask);
    const auto v = pred.value.forward(state, vmask);
    const auto o = pred.order.forward(state, mask);
    return predict_dual(v, o, mask);
}

PaddedState pad_state(const SystemScenario& scenario, std::size_t slots) {
    const std::size_t k = scenario.user_count();
    if (k > slots) {
        throw InvalidParameter("scenario has " + std::to_string(k) + " users but the predictor has " +
                               std::to_string(slots) + " slots");
    }
    const StateVector real = encode_state(scenario);
    PaddedState p;
    p.state.assign(slots * slots, 0.0);
    p.mask.assign(slots, 0);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            p.state[i * slots + j] = real[i * k + j];
        }
        p.mask[i] = scenario.users[i].self_cached() ? 0 : 1;
    }
    return p;
}

std::vector<double> unpad_action(std::span<const double> action, std::size_t users) {
    if (users > action.size()) {
        throw InvalidParameter("action shorter than the user count");
    }
    return normalized(std::vector<double>(action.begin(), action.begin() + static_cast<std::ptrdiff_t>(users)));
}

Policy single_net_policy(const Mlp& net) {
    return [net](const SystemScenario& sc) {
        const auto p = pad_state(sc, net.output_dim());
        return unpad_action(net.forward(p.state, p.mask), sc.user_count());
    };
}

Policy dual_net_policy(const DualPredictor& pred) {
    return [pred](const SystemScenario& sc) {
        const auto p = pad_state(sc, pred.value.output_dim());
        return unpad_action(predict_dual(pred, p.state, p.mask), sc.user_count());
    };
}

Policy random_policy(std::uint64_t seed) {
    auto rng = std::make_shared<RngStream>(seed, 0x72616e64);
    return [rng](const SystemScenario& sc) {
        std::vector<double> a(sc.user_count(), 0.0);
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double u = rng->uniform_open_low();
            a[i] = sc.users[i].self_cached() ? 0.0 : u;
        }
        return normalized(std::move(a));
    };
}

Policy grid_policy(double step) {
    return [step](const SystemScenario& sc) { return grid_best_action(sc, step).alpha; };
}

std::vector<double> policy_rewards(const Policy& policy, const ScenarioFamily& family, std::size_t episodes,
                                   std::size_t t_eval, std::uint64_t seed) {
    if (episodes == 0 || t_eval == 0) {
        throw InvalidParameter("episode and evaluation counts must be positive");
    }
    family.validate();
    std::vector<double> rewards;
    rewards.reserve(episodes);
    for (std::size_t e = 0; e < episodes; ++e) {
        RngStream rng(seed, kEvalStream, e);
        const SystemScenario sc = family.draw(rng);
        const auto draws = draw_gains(sc, t_eval, rng);
        const auto alpha = policy(sc);
        const SicEvaluator ev(sc, action_allocation(alpha));
        rewards.push_back(mean_successes(ev, draws));
    }
    return rewards;
}

MonteCarloEstimate summarize(std::span<const double> values) {
    MonteCarloEstimate est;
    est.samples = values.size();
    if (values.empty()) {
        return est;
    }
    const double n = static_cast<double>(values.size());
    est.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) {
            ss += (v - est.mean) * (v - est.mean);
        }
        est.standard_error = std::sqrt(ss / (n - 1.0) / n);
    }
    return est;
}

MonteCarloEstimate evaluate_policy(const Policy& policy, const ScenarioFamily& family, std::size_t episodes,
                                   std::size_t t_eval, std::uint64_t seed) {
    const auto r = policy_rewards(policy, family, episodes, t_eval, seed);
    return summarize(r);
}

std::string_view to_string(PredictorKind kind) {
    switch (kind) {
    case PredictorKind::SingleMae: return "single-mae";
    case PredictorKind::SingleMaeSinr: return "single-mae-sinr";
    case PredictorKind::Dual: return "dual";
    }
    return "?";
}

Policy TrainedPredictor::policy() const {
    return kind == PredictorKind::Dual ? dual_net_policy(dual) : single_net_policy(single);
}

Policy TrainedPredictor::initial_policy() const {
    return kind == PredictorKind::Dual ? dual_net_policy(initial_dual) : single_net_policy(initial_single);
}

TrainedPredictor train_predictor(PredictorKind kind, const ExperienceStore& store, const ScenarioFamily& family,
                                 const PipelineOptions& options) {
    family.validate();
    const auto dims = predictor_dims(family.users());
    TrainedPredictor tp;
    tp.kind = kind;
    TrainOptions topt = options.train;
    auto make_adam = [&] {
        AdamState a;
        a.learning_rate = topt.learning_rate;
        a.beta1 = topt.beta1;
        a.beta2 = topt.beta2;
        a.epsilon = topt.epsilon;
        return a;
    };
    AdamState adam_a = make_adam();
    AdamState adam_b = make_adam();
    TrainingSet single;
    TrainingSets dual;
    if (kind == PredictorKind::Dual) {
        dual = build_training_sets(store, options.xi_scale);
        tp.dual.value = Mlp(dims, topt.seed);
        tp.dual.order = Mlp(dims, topt.seed + 1, OutputActivation::Sigmoid);
        tp.dual.xi_scale = options.xi_scale;
        tp.initial_dual = tp.dual;
        topt.loss = LossKind::Mae;
    } else {
        single = build_single_set(store);
        tp.single = Mlp(dims, topt.seed);
        tp.initial_single = tp.single;
        topt.loss = kind == PredictorKind::SingleMaeSinr ? LossKind::MaeSinr : LossKind::Mae;
    }
    auto evaluate = [&](std::size_t epoch, double loss) {
        EpochMetrics m;
        m.epoch = epoch;
        m.loss = loss;
        m.reward = evaluate_policy(tp.policy(), family, options.eval_episodes, options.eval_t, options.eval_seed);
        tp.history.push_back(m);
    };
    evaluate(0, std::numeric_limits<double>::quiet_NaN());
    const std::size_t every = std::max<std::size_t>(options.eval_every, 1);
    for (std::size_t e = 1; e <= topt.epochs; ++e) {
        double loss = 0.0;
        if (kind == PredictorKind::Dual) {
            TrainOptions vopt = topt;
            TrainOptions oopt = topt;
            oopt.seed = topt.seed + 1;
            loss = train_epoch(tp.dual.value, adam_a, dual.value, vopt, e, family) +
                   train_epoch(tp.dual.order, adam_b, dual.order, oopt, e, family);
        } else {
            loss = train_epoch(tp.single, adam_a, single, topt, e, family);
        }
        if (e % every == 0 || e == topt.epochs) {
            evaluate(e, loss);
        }
    }
    return tp;
}

std::string metrics_csv(const std::vector<EpochMetrics>& history) {
    std::string out = "epoch,loss,avg_success_users,se\n";
    for (const auto& m : history) {
        out += std::to_string(m.epoch) + "," + (std::isnan(m.loss) ? std::string() : fmt(m.loss)) + "," +
               fmt(m.reward.mean) + "," + fmt(m.reward.standard_error) + "\n";
    }
    return out;
}

} // namespace cnoma
