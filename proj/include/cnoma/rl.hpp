#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string_view>
#include <vector>

#include "cnoma/core_model.hpp"
#include "cnoma/mlp.hpp"

namespace cnoma {

/// Row-major K x K matrix: entry (i, j) is 0 when user i holds its own
/// request (whole row) or holds f_j, and eps_j otherwise.
using StateVector = std::vector<double>;

StateVector encode_state(std::span<const UserProfile> users, const FileLibrary& library);
StateVector encode_state(const SystemScenario& scenario);

/// 1 for users that need power (row not zeroed), 0 for self-cached users.
std::vector<std::uint8_t> state_mask(const StateVector& state);

enum class RequestLaw { Uniform, Zipf };
enum class CachePolicy { Random, LowestIndex, None };

/// P(file k) proportional to (k+1)^-s for 0-based k.
std::vector<double> zipf_pmf(std::size_t files, double skew);

/// Random episodes over fixed channel statistics.
struct ScenarioFamily {
    std::vector<double> lambdas;
    std::vector<double> gain_shapes;          // empty = Rayleigh for all
    std::vector<std::size_t> cache_capacity;  // C_i^max per user; empty = 0
    FileLibrary library;
    double p_max = 1.0;
    double noise_power = 1.0;
    RequestLaw requests = RequestLaw::Uniform;
    double zipf_skew = 0.0;
    CachePolicy caching = CachePolicy::Random;

    std::size_t users() const { return lambdas.size(); }
    void validate() const;
    /// Caches: Random draws 0..C_i^max distinct files uniformly; LowestIndex
    /// holds files 0..C_i^max-1. Requests follow `requests`.
    SystemScenario draw(RngStream& rng) const;
    /// Channel part only: no caches, every request file 0.
    SystemScenario base() const;
};

/// Users 1, 2, 3 with mean gains 1, 2, 3, cache capacity 2, 38-file library.
ScenarioFamily reference_family_k3();
/// Thresholds 0.016 .. 0.608 in steps of 0.016.
FileLibrary reference_library();

/// Full-bandwidth allocation from an action; exact nonzero ties are split
/// by 1e-9 with lower indices taking the larger share.
PowerAllocation action_allocation(std::span<const double> alpha);

/// Expected number of successful users over the channel law.
double expected_reward(const SystemScenario& scenario, std::span<const double> alpha);

struct ActionResult {
    std::vector<double> alpha;
    double reward = 0.0;
};

struct SearchOptions {
    std::size_t a_max = 200;
    std::size_t t_eval = 500;
};

/// Random-search best action (uniform components, self-cached users zeroed,
/// renormalized). All candidates are scored on the same T_eval draws.
ActionResult find_best_action(const SystemScenario& scenario, const SearchOptions& options, RngStream& rng);

/// Exhaustive search over the simplex grid with the given step, scored by
/// expected_reward. Self-cached users are held at 0.
ActionResult grid_best_action(const SystemScenario& scenario, double step = 0.02);

struct StoreEntry {
    StateVector state;
    std::vector<double> action;
    double reward = 0.0;
};

/// Best action seen per state, keyed by the state quantized to 1e-12.
class ExperienceStore {
public:
    explicit ExperienceStore(std::size_t capacity = 100000) : capacity_(capacity) {}

    std::size_t size() const { return entries_.size(); }
    std::size_t capacity() const { return capacity_; }
    bool empty() const { return entries_.empty(); }
    const std::vector<StoreEntry>& entries() const { return entries_; }
    const StoreEntry* find(const StateVector& state) const;

    /// New state: stored while capacity remains. Known state: replaced when
    /// the new reward is strictly higher. Returns true if anything changed.
    bool offer(const StateVector& state, std::vector<double> action, double reward);

    /// One JSON object per line: {"state": [...], "action": [...], "reward": r}.
    void save(const std::filesystem::path& path) const;
    static ExperienceStore load(const std::filesystem::path& path, std::size_t capacity = 100000);

private:
    using Key = std::vector<std::int64_t>;
    static Key key(const StateVector& state);

    std::size_t capacity_;
    std::vector<StoreEntry> entries_;
    std::map<Key, std::size_t> index_;
};

struct ExploreOptions {
    std::size_t trials = 10000;
    SearchOptions search;
    std::size_t capacity = 100000;
    std::uint64_t seed = 0;
};

/// Trial t draws its episode and candidates from stream (seed, t).
ExperienceStore explore(const ScenarioFamily& family, const ExploreOptions& options);

struct TrainingSet {
    std::vector<StateVector> inputs;
    std::vector<std::vector<double>> targets;
    std::vector<std::vector<std::uint8_t>> masks;

    std::size_t size() const { return inputs.size(); }
};

struct TrainingSets {
    TrainingSet value; // actions sorted descending
    TrainingSet order; // actions times xi_scale
};

/// Raw actions as targets.
TrainingSet build_single_set(const ExperienceStore& store);
TrainingSets build_training_sets(const ExperienceStore& store, double xi_scale = 2.0);

struct TrainOptions {
    std::size_t epochs = 150;
    std::size_t batch_size = 32;
    LossKind loss = LossKind::Mae;
    std::size_t sinr_samples = 256;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 0;
};

/// One pass over `data` in a seed- and epoch-determined shuffle order.
/// MaeSinr draws a fresh fixed SINR context per batch from the family's
/// channel statistics. Returns the mean per-sample loss before each update.
double train_epoch(Mlp& net, AdamState& adam, const TrainingSet& data, const TrainOptions& options,
                   std::size_t epoch, const ScenarioFamily& family);

struct DualPredictor {
    Mlp value;
    Mlp order;
    double xi_scale = 2.0;
};

/// Descending rank of each entry: slot with the largest value gets rank 0;
/// ties go to the lower index.
std::vector<std::size_t> ranks_descending(std::span<const double> v);

/// The value net sees a mask whose first (active count) slots are on, since
/// its targets are sorted.
std::vector<std::uint8_t> sorted_mask(std::span<const std::uint8_t> mask);

/// Sorted value-net output placed by the order-net's ranks, masked users
/// zeroed, renormalized.
std::vector<double> predict_dual(const DualPredictor& pred, const StateVector& state,
                                 std::span<const std::uint8_t> mask);
std::vector<double> predict_dual(std::span<const double> value_out, std::span<const double> order_out,
                                 std::span<const std::uint8_t> mask);

/// Pads a scenario with always-self-cached virtual users up to `slots`
/// (their rows and columns are zero and they are masked).
struct PaddedState {
    StateVector state;
    std::vector<std::uint8_t> mask;
};
PaddedState pad_state(const SystemScenario& scenario, std::size_t slots);
/// First `users` entries of a padded action, renormalized over them.
std::vector<double> unpad_action(std::span<const double> action, std::size_t users);

using Policy = std::function<std::vector<double>(const SystemScenario&)>;

Policy single_net_policy(const Mlp& net);
Policy dual_net_policy(const DualPredictor& pred);
/// Uniform random action, self-cached users zeroed.
Policy random_policy(std::uint64_t seed);
Policy grid_policy(double step = 0.02);

/// Average successful users per episode. Episode e draws its scenario and
/// T_eval gain vectors from stream (seed, e), so two policies evaluated with
/// the same arguments see identical episodes.
std::vector<double> policy_rewards(const Policy& policy, const ScenarioFamily& family, std::size_t episodes,
                                   std::size_t t_eval, std::uint64_t seed);
MonteCarloEstimate summarize(std::span<const double> values);
MonteCarloEstimate evaluate_policy(const Policy& policy, const ScenarioFamily& family, std::size_t episodes,
                                   std::size_t t_eval, std::uint64_t seed);

enum class PredictorKind { SingleMae, SingleMaeSinr, Dual };
std::string_view to_string(PredictorKind kind);

struct EpochMetrics {
    std::size_t epoch = 0;
    double loss = 0.0;
    MonteCarloEstimate reward;
};

struct TrainedPredictor {
    PredictorKind kind = PredictorKind::SingleMae;
    Mlp single;
    DualPredictor dual;
    std::vector<EpochMetrics> history; // epoch 0 is the untrained net
    Mlp initial_single;
    DualPredictor initial_dual;

    Policy policy() const;
    Policy initial_policy() const;
};

struct PipelineOptions {
    TrainOptions train;
    double xi_scale = 2.0;
    std::size_t eval_episodes = 200;
    std::size_t eval_t = 200;
    std::uint64_t eval_seed = 1;
    /// Evaluate every n epochs (0 or 1 = every epoch); the last is always evaluated.
    std::size_t eval_every = 1;
};

TrainedPredictor train_predictor(PredictorKind kind, const ExperienceStore& store, const ScenarioFamily& family,
                                 const PipelineOptions& options);

/// epoch,loss,avg_success_users,se
std::string metrics_csv(const std::vector<EpochMetrics>& history);

} // namespace cnoma
