#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cnoma/rng.hpp"

namespace cnoma {

using FileIndex = std::size_t;
using UserIndex = std::size_t;
using Grouping = std::vector<std::vector<UserIndex>>;

/// Raised for parameters outside a documented domain.
class InvalidParameter : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when an allocation cannot be decoded unambiguously, e.g. two
/// co-channel users with identical nonzero power fractions.
class MalformedAllocation : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Full-bandwidth SINR decode thresholds, one per file.
struct FileLibrary {
    std::vector<double> thresholds;

    std::size_t size() const { return thresholds.size(); }
    double threshold(FileIndex f) const;
    void validate() const;

    /// `count` files with thresholds first, first+step, ...
    static FileLibrary evenly_spaced(std::size_t count, double first, double step);
};

struct UserProfile {
    /// Rate of the exponential law of |h|^2 (mean gain is 1/lambda).
    double lambda = 1.0;
    double distance = 1.0;
    double pathloss_exp = 2.0;
    /// Shape of a Gamma gain law with the same mean; 1 is Rayleigh fading.
    double gain_shape = 1.0;
    std::vector<FileIndex> cache;
    std::size_t cache_capacity = std::numeric_limits<std::size_t>::max();
    FileIndex request = 0;

    bool has_cached(FileIndex f) const;
    bool self_cached() const { return has_cached(request); }
    double mean_gain() const { return 1.0 / lambda; }
};

struct SystemScenario {
    std::vector<UserProfile> users;
    FileLibrary library;
    double p_max = 1.0;
    /// Full-bandwidth noise power sigma^2.
    double noise_power = 1.0;
    std::uint64_t rng_seed = 0;

    std::size_t user_count() const { return users.size(); }
    /// beta_i = d_i^gamma * sigma^2 at full bandwidth.
    double beta(UserIndex i) const;
    double request_threshold(UserIndex i) const { return library.threshold(users[i].request); }
    void validate() const;
};

/// Power fractions per user, grouped into co-channel groups.
///
/// With no explicit groups, all users share one full-bandwidth channel and
/// each group's power is p_max. With pair budgets, group g transmits with
/// pair_budgets[g] watts and fractions are relative to that budget.
struct PowerAllocation {
    std::vector<double> alphas;
    std::optional<std::vector<double>> pair_budgets;
    std::size_t subchannel_count = 1;
    Grouping groups;

    static PowerAllocation full_bandwidth(std::vector<double> alphas);

    Grouping effective_groups() const;
    double group_power(std::size_t group, double p_max) const;
    /// alpha_i times the power of the group user i belongs to, in watts.
    std::vector<double> user_powers(double p_max) const;
    void validate(const SystemScenario& scenario) const;
};

struct DecodeOutcome {
    std::vector<bool> success;
    std::size_t success_count = 0;

    bool all() const { return success_count == success.size(); }
};

struct MonteCarloEstimate {
    double mean = 0.0;
    double standard_error = 0.0;
    std::size_t samples = 0;
};

/// SINR threshold when only 1/W of the bandwidth is available: (1+eps)^W - 1.
double adjust_threshold(double eps, std::size_t subchannels);

/// One independent draw of |h_i|^2 per user.
std::vector<double> sample_channel_gains(const SystemScenario& scenario, RngStream& rng);
void sample_channel_gains(const SystemScenario& scenario, RngStream& rng, std::span<double> out);

/// Precomputed SIC decoder for one (scenario, allocation).
///
/// Thresholds are adjusted for the allocation's subchannel count and noise
/// is scaled to sigma^2/W internally. `decode` walks the SIC chain signal
/// by signal; `count_successes` uses the equivalent per-user minimum gain.
class SicEvaluator {
public:
    SicEvaluator(const SystemScenario& scenario, const PowerAllocation& alloc);

    DecodeOutcome decode(std::span<const double> gains) const;
    std::size_t count_successes(std::span<const double> gains) const;
    bool all_succeed(std::span<const double> gains) const;

    /// Smallest |h_i|^2 for which user i succeeds: 0 if served from cache,
    /// +inf if the allocation can never serve the user.
    std::span<const double> gain_thresholds() const { return min_gain_; }

private:
    struct Signal {
        UserIndex owner;
        FileIndex file;
        double power;
        double threshold;
    };
    struct UserPlan {
        bool cached = false;
        std::size_t group = 0;
        std::size_t target = 0; // position in the group's signal order
        bool reachable = false;
    };

    std::size_t users_;
    std::vector<std::vector<Signal>> signals_; // per group, decreasing power
    std::vector<UserPlan> plan_;
    std::vector<double> noise_;                 // beta_i / W
    std::vector<std::vector<FileIndex>> cache_; // per user, sorted
    std::vector<double> min_gain_;

    bool cached(UserIndex user, FileIndex file) const;
    bool decode_user(UserIndex user, double gain) const;
};

DecodeOutcome sic_decode(std::span<const double> gains, const PowerAllocation& alloc,
                         const SystemScenario& scenario);

/// Monte Carlo estimate of P(all users succeed) with binomial standard error.
MonteCarloEstimate estimate_success_probability(const SystemScenario& scenario,
                                                const PowerAllocation& alloc, std::size_t n_samples,
                                                RngStream& rng);

/// Monte Carlo mean of the number of successful users.
MonteCarloEstimate estimate_success_count(const SystemScenario& scenario,
                                          const PowerAllocation& alloc, std::size_t n_samples,
                                          RngStream& rng);

/// P(|h|^2 >= threshold) under the user's gain law.
double gain_survival(const UserProfile& user, double threshold);

/// Exact channel averages for one (scenario, allocation): probability that
/// every user succeeds, and expected number of successful users.
double exact_success_probability(const SystemScenario& scenario, const PowerAllocation& alloc);
double exact_success_count(const SystemScenario& scenario, const PowerAllocation& alloc);

/// Separates equal nonzero fractions inside each group by multiples of
/// `step`, keeping every group sum. Among tied users, the one listed earlier
/// in `priority` gets the larger fraction; users absent from `priority` rank
/// after listed ones, by index. Empty `groups` means one group of all users.
void stagger_ties(std::vector<double>& alphas, std::span<const UserIndex> priority = {},
                  const Grouping& groups = {}, double step = 1e-9);

} // namespace cnoma
