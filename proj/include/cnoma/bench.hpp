#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cnoma/core_model.hpp"
#include "cnoma/rl.hpp"

namespace cnoma {

/// Equal split over users needing a transmission, self-cached users at 0.
/// Exact ties are separated by 1e-9 so that users with larger lambda*beta
/// (weaker average channels) get the larger share and are decoded first.
PowerAllocation baseline_equal(const SystemScenario& scenario);

/// Max-min fair rates from average CNRs c_i = p_max / (lambda_i beta_i),
/// ignoring caches. Users are decoded in order of increasing CNR; the
/// common rate is found by bisection.
PowerAllocation baseline_mmf(const SystemScenario& scenario);

/// Users by decreasing average CNR, ties by index.
std::vector<UserIndex> mmf_cnr_order(const SystemScenario& scenario);

/// log2(1 + c_i P_i / (c_i * (power of users stronger in CNR) + 1)) per
/// user, for power fractions `alpha`.
std::vector<double> mmf_rates(const SystemScenario& scenario, std::span<const double> alpha);

enum class Metric { SuccessProbability, AvgSuccessUsers };
enum class Estimator {
    Conditional, // exact channel average per drawn episode
    Sampled      // one gain draw per episode
};

struct PredictorSpec {
    /// Checkpoints to load; when empty the predictor is trained from
    /// `family` using the exploration and training settings below.
    std::string value_checkpoint;
    std::string order_checkpoint;
    /// Relative checkpoint paths resolve against this directory (the
    /// config file's, when loaded from disk). Not part of the config hash.
    std::filesystem::path base_dir;
    ScenarioFamily family = reference_family_k3();
    ExploreOptions explore;
    PipelineOptions pipeline;
};

struct ExperimentSpec {
    std::string name = "experiment";
    ScenarioFamily family;      // per-user vectors repeat cyclically when the sweep changes K
    std::size_t users = 0;      // 0 = family.users()
    std::vector<std::string> methods;
    std::string sweep_variable = "p_max"; // users | p_max | zipf_skew | cache_capacity
    std::vector<double> sweep_values;
    Metric metric = Metric::SuccessProbability;
    Estimator estimator = Estimator::Conditional;
    std::size_t samples = 10000;
    std::uint64_t seed = 1;
    std::optional<PredictorSpec> predictor;
    nlohmann::json source; // the JSON this spec was read from

    void validate() const;
    /// The family at one sweep point.
    ScenarioFamily family_at(double sweep_value) const;
};

ExperimentSpec experiment_from_json(const nlohmann::json& j);
ExperimentSpec load_experiment(const std::filesystem::path& path);
nlohmann::json experiment_to_json(const ExperimentSpec& spec);

ScenarioFamily family_from_json(const nlohmann::json& j);
/// Missing keys keep the struct defaults.
ExploreOptions explore_from_json(const nlohmann::json& j);
nlohmann::json explore_to_json(const ExploreOptions& options);
PipelineOptions pipeline_from_json(const nlohmann::json& j);
nlohmann::json pipeline_to_json(const PipelineOptions& options);
nlohmann::json family_to_json(const ScenarioFamily& family);

/// method1, method2-exact, method2-dualnet, oma, equal, mmf; a "-nocache"
/// suffix strips every cache before planning and decoding.
bool is_known_method(const std::string& method);

struct ResultRow {
    std::string experiment;
    std::string method;
    std::string sweep_variable;
    double sweep_value = 0.0;
    std::string metric;
    double value = 0.0;
    double standard_error = 0.0;
    std::size_t samples = 0;
    std::string status = "ok";
    std::string config_hash;
    double wall_seconds = 0.0;
    /// Per-episode metric values; episode e is shared by every method at
    /// every sweep point, so differences can be paired. Not written to CSV.
    std::vector<double> episodes;
};

struct ResultTable {
    std::string experiment;
    std::string config_hash;
    nlohmann::json config;
    std::vector<ResultRow> rows;

    bool all_ok() const;
    const ResultRow* find(const std::string& method, double sweep_value) const;
};

/// 64-bit FNV-1a of the compact JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

/// Allocation of one method on one scenario (caches already stripped for
/// -nocache variants). `dual` is required for method2-dualnet.
PowerAllocation method_allocation(const std::string& method, const SystemScenario& scenario,
                                  const DualPredictor* dual = nullptr);

/// Trains or loads the dual predictor described by `spec`.
DualPredictor prepare_predictor(const PredictorSpec& spec);

/// Episode e uses stream (seed, e) at every sweep point and for every
/// method. Sweep points run concurrently.
ResultTable run_experiment(const ExperimentSpec& spec);

/// Writes <dir>/<name>.csv, <dir>/<name>.manifest.json and
/// <dir>/<name>.timing.csv. The CSV depends only on the spec.
void emit_plotdata(const ResultTable& table, const std::filesystem::path& dir);
std::string results_csv(const ResultTable& table);

} // namespace cnoma
