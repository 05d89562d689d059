#include "cnoma/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <boost/math/special_functions/gamma.hpp>

namespace cnoma {

namespace {

constexpr double kSumTolerance = 1e-9;

std::string user_label(UserIndex i) { return "user " + std::to_string(i); }

} // namespace

double FileLibrary::threshold(FileIndex f) const {
    if (f >= thresholds.size()) {
        throw InvalidParameter("file index " + std::to_string(f) + " outside library of " +
                               std::to_string(thresholds.size()) + " files");
    }
    return thresholds[f];
}

void FileLibrary::validate() const {
    if (thresholds.empty()) {
        throw InvalidParameter("file library must contain at least one file");
    }
    for (std::size_t f = 0; f < thresholds.size(); ++f) {
        if (!(thresholds[f] > 0.0) || !std::isfinite(thresholds[f])) {
            throw InvalidParameter("threshold of file " + std::to_string(f) +
                                   " must be positive and finite");
        }
    }
}

FileLibrary FileLibrary::evenly_spaced(std::size_t count, double first, double step) {
    FileLibrary lib;
    lib.thresholds.reserve(count);
    for (std::size_t f = 0; f < count; ++f) {
        lib.thresholds.push_back(first + step * static_cast<double>(f));
    }
    return lib;
}

bool UserProfile::has_cached(FileIndex f) const {
    return std::find(cache.begin(), cache.end(), f) != cache.end();
}

double SystemScenario::beta(UserIndex i) const {
    const auto& u = users.at(i);
    return std::pow(u.distance, u.pathloss_exp) * noise_power;
}

void SystemScenario::validate() const {
    library.validate();
    if (users.empty()) {
        throw InvalidParameter("scenario needs at least one user");
    }
    if (!(p_max > 0.0) || !std::isfinite(p_max)) {
        throw InvalidParameter("p_max must be positive");
    }
    if (!(noise_power > 0.0) || !std::isfinite(noise_power)) {
        throw InvalidParameter("noise_power must be positive");
    }
    for (UserIndex i = 0; i < users.size(); ++i) {
        const auto& u = users[i];
        if (!(u.lambda > 0.0) || !std::isfinite(u.lambda)) {
            throw InvalidParameter(user_label(i) + ": lambda must be positive");
        }
        if (!(u.distance > 0.0)) {
            throw InvalidParameter(user_label(i) + ": distance must be positive");
        }
        if (!(u.pathloss_exp > 0.0)) {
            throw InvalidParameter(user_label(i) + ": pathloss exponent must be positive");
        }
        if (!(u.gain_shape > 0.0)) {
            throw InvalidParameter(user_label(i) + ": gain shape must be positive");
        }
        if (u.request >= library.size()) {
            throw InvalidParameter(user_label(i) + ": request outside library");
        }
        if (u.cache.size() > u.cache_capacity) {
            throw InvalidParameter(user_label(i) + ": cache holds more files than its capacity");
        }
        for (FileIndex f : u.cache) {
            if (f >= library.size()) {
                throw InvalidParameter(user_label(i) + ": cached file outside library");
            }
        }
        const double b = beta(i);
        if (!(b > 0.0) || !std::isfinite(b)) {
            throw InvalidParameter(user_label(i) + ": beta must be positive and finite");
        }
    }
}

PowerAllocation PowerAllocation::full_bandwidth(std::vector<double> alphas) {
    PowerAllocation a;
    a.alphas = std::move(alphas);
    return a;
}

Grouping PowerAllocation::effective_groups() const {
    if (!groups.empty()) {
        return groups;
    }
    Grouping g(1);
    g[0].resize(alphas.size());
    std::iota(g[0].begin(), g[0].end(), UserIndex{0});
    return g;
}

double PowerAllocation::group_power(std::size_t group, double p_max) const {
    if (pair_budgets) {
        return pair_budgets->at(group);
    }
    return p_max;
}

std::vector<double> PowerAllocation::user_powers(double p_max) const {
    std::vector<double> powers(alphas.size(), 0.0);
    const Grouping g = effective_groups();
    for (std::size_t k = 0; k < g.size(); ++k) {
        const double budget = group_power(k, p_max);
        for (UserIndex u : g[k]) {
            powers.at(u) = alphas.at(u) * budget;
        }
    }
    return powers;
}

void PowerAllocation::validate(const SystemScenario& scenario) const {
    const std::size_t k_users = scenario.user_count();
    if (alphas.size() != k_users) {
        throw MalformedAllocation("allocation has " + std::to_string(alphas.size()) +
                                  " fractions for " + std::to_string(k_users) + " users");
    }
    if (subchannel_count == 0) {
        throw MalformedAllocation("subchannel count must be positive");
    }
    for (double a : alphas) {
        if (!(a >= 0.0 && a <= 1.0 + kSumTolerance)) {
            throw MalformedAllocation("power fractions must lie in [0,1]");
        }
    }
    const Grouping g = effective_groups();
    if (!groups.empty() && groups.size() != subchannel_count) {
        throw MalformedAllocation("group count must equal subchannel count");
    }
    if (groups.empty() && subchannel_count != 1 && !pair_budgets) {
        throw MalformedAllocation("multi-subchannel allocation needs explicit groups");
    }
    std::vector<int> seen(k_users, 0);
    for (const auto& group : g) {
        double sum = 0.0;
        for (UserIndex u : group) {
            if (u >= k_users) {
                throw MalformedAllocation("group references unknown user");
            }
            ++seen[u];
            sum += alphas[u];
        }
        if (sum != 0.0 && std::abs(sum - 1.0) > kSumTolerance) {
            std::ostringstream msg;
            msg << "fractions in a co-channel group sum to " << sum << ", expected 1 or 0";
            throw MalformedAllocation(msg.str());
        }
    }
    for (UserIndex u = 0; u < k_users; ++u) {
        if (seen[u] != 1) {
            throw MalformedAllocation(user_label(u) + " must belong to exactly one group");
        }
    }
    if (pair_budgets) {
        if (pair_budgets->size() != g.size()) {
            throw MalformedAllocation("one budget per group required");
        }
        double total = 0.0;
        for (double b : *pair_budgets) {
            if (!(b >= 0.0)) {
                throw MalformedAllocation("pair budgets must be nonnegative");
            }
            total += b;
        }
        if (total != 0.0 && std::abs(total - scenario.p_max) > kSumTolerance * scenario.p_max) {
            throw MalformedAllocation("pair budgets must sum to p_max");
        }
    }
}

double adjust_threshold(double eps, std::size_t subchannels) {
    if (subchannels == 1) {
        return eps;
    }
    return std::expm1(static_cast<double>(subchannels) * std::log1p(eps));
}

void sample_channel_gains(const SystemScenario& scenario, RngStream& rng, std::span<double> out) {
    for (std::size_t i = 0; i < scenario.users.size(); ++i) {
        const auto& u = scenario.users[i];
        if (u.gain_shape == 1.0) {
            out[i] = rng.exponential(u.lambda);
        } else {
            out[i] = rng.gamma(u.gain_shape, 1.0 / (u.lambda * u.gain_shape));
        }
    }
}

std::vector<double> sample_channel_gains(const SystemScenario& scenario, RngStream& rng) {
    std::vector<double> gains(scenario.users.size());
    sample_channel_gains(scenario, rng, gains);
    return gains;
}

SicEvaluator::SicEvaluator(const SystemScenario& scenario, const PowerAllocation& alloc)
    : users_(scenario.user_count()) {
    alloc.validate(scenario);
    const std::size_t w = alloc.subchannel_count;
    const Grouping groups = alloc.effective_groups();

    cache_.resize(users_);
    noise_.resize(users_);
    plan_.resize(users_);
    for (UserIndex u = 0; u < users_; ++u) {
        cache_[u] = scenario.users[u].cache;
        std::sort(cache_[u].begin(), cache_[u].end());
        noise_[u] = scenario.beta(u) / static_cast<double>(w);
    }

    signals_.resize(groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const double budget = alloc.group_power(g, scenario.p_max);
        auto& sig = signals_[g];
        for (UserIndex u : groups[g]) {
            plan_[u].group = g;
            if (alloc.alphas[u] > 0.0) {
                const FileIndex f = scenario.users[u].request;
                sig.push_back({u, f, alloc.alphas[u] * budget,
                               adjust_threshold(scenario.library.threshold(f), w)});
            }
        }
        std::stable_sort(sig.begin(), sig.end(),
                         [](const Signal& a, const Signal& b) { return a.power > b.power; });
        for (std::size_t k = 1; k < sig.size(); ++k) {
            if (sig[k].power == sig[k - 1].power) {
                throw MalformedAllocation("users " + std::to_string(sig[k - 1].owner) + " and " +
                                          std::to_string(sig[k].owner) +
                                          " share an identical nonzero power fraction; decode "
                                          "order is undefined");
            }
        }
    }

    min_gain_.assign(users_, 0.0);
    for (UserIndex u = 0; u < users_; ++u) {
        auto& p = plan_[u];
        const FileIndex want = scenario.users[u].request;
        p.cached = cached(u, want);
        if (p.cached) {
            continue;
        }
        const auto& sig = signals_[p.group];
        for (std::size_t k = 0; k < sig.size(); ++k) {
            if (sig[k].file == want) {
                p.target = k;
                p.reachable = true;
                break;
            }
        }
        if (!p.reachable) {
            min_gain_[u] = std::numeric_limits<double>::infinity();
            continue;
        }
        // g*P_j >= thr_j*(g*I_j + noise)  <=>  g*(P_j - thr_j*I_j) >= thr_j*noise
        double need = 0.0;
        for (std::size_t k = 0; k <= p.target; ++k) {
            if (cached(u, sig[k].file)) {
                continue;
            }
            double interference = 0.0;
            for (std::size_t m = k + 1; m < sig.size(); ++m) {
                if (!cached(u, sig[m].file)) {
                    interference += sig[m].power;
                }
            }
            const double margin = sig[k].power - sig[k].threshold * interference;
            if (!(margin > 0.0)) {
                need = std::numeric_limits<double>::infinity();
                break;
            }
            need = std::max(need, sig[k].threshold * noise_[u] / margin);
        }
        min_gain_[u] = need;
    }
}

bool SicEvaluator::cached(UserIndex user, FileIndex file) const {
    return std::binary_search(cache_[user].begin(), cache_[user].end(), file);
}

bool SicEvaluator::decode_user(UserIndex u, double gain) const {
    const auto& p = plan_[u];
    if (p.cached) {
        return true;
    }
    if (!p.reachable) {
        return false;
    }
    const auto& sig = signals_[p.group];
    for (std::size_t k = 0; k <= p.target; ++k) {
        if (cached(u, sig[k].file)) {
            continue; // removed from the superposition without decoding
        }
        double interference = 0.0;
        for (std::size_t m = k + 1; m < sig.size(); ++m) {
            if (!cached(u, sig[m].file)) {
                interference += sig[m].power;
            }
        }
        if (!(gain * sig[k].power >= sig[k].threshold * (gain * interference + noise_[u]))) {
            return false;
        }
    }
    return true;
}

DecodeOutcome SicEvaluator::decode(std::span<const double> gains) const {
    DecodeOutcome out;
    out.success.resize(users_);
    for (UserIndex u = 0; u < users_; ++u) {
        const bool ok = decode_user(u, gains[u]);
        out.success[u] = ok;
        out.success_count += ok ? 1 : 0;
    }
    return out;
}

std::size_t SicEvaluator::count_successes(std::span<const double> gains) const {
    std::size_t n = 0;
    for (UserIndex u = 0; u < users_; ++u) {
        n += gains[u] >= min_gain_[u] ? 1 : 0;
    }
    return n;
}

bool SicEvaluator::all_succeed(std::span<const double> gains) const {
    for (UserIndex u = 0; u < users_; ++u) {
        if (!(gains[u] >= min_gain_[u])) {
            return false;
        }
    }
    return true;
}

DecodeOutcome sic_decode(std::span<const double> gains, const PowerAllocation& alloc,
                         const SystemScenario& scenario) {
    return SicEvaluator(scenario, alloc).decode(gains);
}

namespace {

template <typename Indicator>
MonteCarloEstimate monte_carlo(const SystemScenario& scenario, std::size_t n_samples,
                               RngStream& rng, Indicator&& indicator) {
    if (n_samples == 0) {
        throw InvalidParameter("n_samples must be positive");
    }
    std::vector<double> gains(scenario.user_count());
    double sum = 0.0;
    double sum_sq = 0.0;
    for (std::size_t s = 0; s < n_samples; ++s) {
        sample_channel_gains(scenario, rng, gains);
        const double x = indicator(gains);
        sum += x;
        sum_sq += x * x;
    }
    const double n = static_cast<double>(n_samples);
    MonteCarloEstimate est;
    est.samples = n_samples;
    est.mean = sum / n;
    const double var = n > 1 ? std::max(0.0, (sum_sq - n * est.mean * est.mean) / (n - 1)) : 0.0;
    est.standard_error = std::sqrt(var / n);
    return est;
}

} // namespace

MonteCarloEstimate estimate_success_probability(const SystemScenario& scenario,
                                                const PowerAllocation& alloc, std::size_t n_samples,
                                                RngStream& rng) {
    const SicEvaluator eval(scenario, alloc);
    return monte_carlo(scenario, n_samples, rng, [&](std::span<const double> g) {
        return eval.all_succeed(g) ? 1.0 : 0.0;
    });
}

MonteCarloEstimate estimate_success_count(const SystemScenario& scenario,
                                          const PowerAllocation& alloc, std::size_t n_samples,
                                          RngStream& rng) {
    const SicEvaluator eval(scenario, alloc);
    return monte_carlo(scenario, n_samples, rng, [&](std::span<const double> g) {
        return static_cast<double>(eval.count_successes(g));
    });
}

void stagger_ties(std::vector<double>& alphas, std::span<const UserIndex> priority,
                  const Grouping& groups, double step) {
    Grouping g = groups;
    if (g.empty()) {
        g.resize(1);
        g[0].resize(alphas.size());
        std::iota(g[0].begin(), g[0].end(), UserIndex{0});
    }
    auto rank_of = [&](UserIndex u) {
        const auto it = std::find(priority.begin(), priority.end(), u);
        return it == priority.end() ? priority.size() + u : static_cast<std::size_t>(it - priority.begin());
    };
    for (const auto& group : g) {
        std::vector<UserIndex> members;
        for (UserIndex u : group) {
            if (alphas[u] > 0.0) {
                members.push_back(u);
            }
        }
        std::vector<bool> done(members.size(), false);
        for (std::size_t a = 0; a < members.size(); ++a) {
            if (done[a]) {
                continue;
            }
            std::vector<UserIndex> tied{members[a]};
            for (std::size_t b = a + 1; b < members.size(); ++b) {
                if (!done[b] && alphas[members[b]] == alphas[members[a]]) {
                    tied.push_back(members[b]);
                    done[b] = true;
                }
            }
            if (tied.size() < 2) {
                continue;
            }
            std::sort(tied.begin(), tied.end(),
                      [&](UserIndex x, UserIndex y) { return rank_of(x) < rank_of(y); });
            const double centre = 0.5 * static_cast<double>(tied.size() - 1);
            for (std::size_t r = 0; r < tied.size(); ++r) {
                alphas[tied[r]] += step * (centre - static_cast<double>(r));
            }
        }
    }
}

double gain_survival(const UserProfile& user, double threshold) {
    if (!(threshold > 0.0)) {
        return 1.0;
    }
    if (std::isinf(threshold)) {
        return 0.0;
    }
    if (user.gain_shape == 1.0) {
        return std::exp(-user.lambda * threshold);
    }
    return boost::math::gamma_q(user.gain_shape, threshold * user.lambda * user.gain_shape);
}

double exact_success_probability(const SystemScenario& scenario, const PowerAllocation& alloc) {
    const SicEvaluator ev(scenario, alloc);
    const auto thr = ev.gain_thresholds();
    double p = 1.0;
    for (std::size_t i = 0; i < thr.size(); ++i) {
        p *= gain_survival(scenario.users[i], thr[i]);
    }
    return p;
}

double exact_success_count(const SystemScenario& scenario, const PowerAllocation& alloc) {
    const SicEvaluator ev(scenario, alloc);
    const auto thr = ev.gain_thresholds();
    double total = 0.0;
    for (std::size_t i = 0; i < thr.size(); ++i) {
        total += gain_survival(scenario.users[i], thr[i]);
    }
    return total;
}

} // namespace cnoma
