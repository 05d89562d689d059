#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace cnoma {

enum class OutputActivation : std::uint8_t { Softmax = 0, Sigmoid = 1 };

/// Dense feed-forward net: relu between layers, masked softmax (or
/// elementwise sigmoid) at the output.
///
/// Parameters live in one flat vector, layer by layer: the weight matrix
/// (out x in, row-major) followed by the bias vector.
class Mlp {
public:
    Mlp() = default;
    /// dims = {in, hidden..., out}; He-uniform fan-in init from `seed`.
    Mlp(std::vector<std::size_t> dims, std::uint64_t seed, OutputActivation output = OutputActivation::Softmax);
    /// All parameters zero.
    static Mlp zeros(std::vector<std::size_t> dims, OutputActivation output = OutputActivation::Softmax);

    const std::vector<std::size_t>& dims() const { return dims_; }
    std::size_t layer_count() const { return dims_.empty() ? 0 : dims_.size() - 1; }
    std::size_t input_dim() const { return dims_.front(); }
    std::size_t output_dim() const { return dims_.back(); }
    std::uint64_t seed() const { return seed_; }
    OutputActivation output_activation() const { return output_; }

    std::vector<double>& parameters() { return params_; }
    const std::vector<double>& parameters() const { return params_; }
    std::span<double> weights(std::size_t layer);
    std::span<double> biases(std::size_t layer);
    std::span<const double> weights(std::size_t layer) const;
    std::span<const double> biases(std::size_t layer) const;

    /// mask[i] = 1 keeps output i; masked outputs are 0 and the softmax
    /// renormalizes over the rest. An empty mask keeps every output.
    std::vector<double> forward(std::span<const double> input, std::span<const std::uint8_t> mask = {}) const;

private:
    std::vector<std::size_t> dims_;
    std::vector<std::size_t> offsets_; // start of each layer's weights
    std::vector<double> params_;
    std::uint64_t seed_ = 0;
    OutputActivation output_ = OutputActivation::Softmax;

    void layout();
};

/// 9-20-30-20-10-3 for K = 3, 16-35-50-35-12-4 for K = 4.
std::vector<std::size_t> predictor_dims(std::size_t users);

double loss_mae(std::span<const double> pred, std::span<const double> target);

/// Fixed channel draws and link constants for the SINR loss term.
struct SinrContext {
    std::vector<double> betas;                // full-bandwidth beta_i per output slot
    double p_max = 1.0;
    std::vector<std::vector<double>> gains;   // samples x users

    std::size_t users() const { return betas.size(); }
    void validate() const;
};

/// `count` gain draws per user from Exp(lambda_i).
SinrContext make_sinr_context(std::span<const double> lambdas, std::span<const double> betas, double p_max,
                              std::size_t count, std::uint64_t seed);

/// Users strongest first: descending alpha, ties by lower index.
std::vector<std::size_t> descending_order(std::span<const double> alpha);

/// Mean SINRs of the K(K+1)/2 decodes implied by `order`: the user at rank
/// r decodes every signal at ranks 0..r, each against the weaker signals.
std::vector<double> sinr_terms(std::span<const double> alpha, std::span<const std::size_t> order,
                               const SinrContext& ctx);

/// MAE(pred, target) + MAE of the SINR terms of pred and target, both under
/// the decode order of target.
double loss_mae_plus_sinr(std::span<const double> pred, std::span<const double> target, const SinrContext& ctx);

enum class LossKind { Mae, MaeSinr };

struct Gradients {
    std::vector<double> values; // same layout as Mlp::parameters()
    double loss = 0.0;
};

/// Exact gradient of the chosen loss at one sample. `ctx` is required for
/// MaeSinr and ignored for Mae.
Gradients backprop(const Mlp& net, std::span<const double> input, std::span<const std::uint8_t> mask,
                   std::span<const double> target, LossKind loss, const SinrContext* ctx = nullptr);

/// Loss of the net's output on one sample.
double evaluate_loss(const Mlp& net, std::span<const double> input, std::span<const std::uint8_t> mask,
                     std::span<const double> target, LossKind loss, const SinrContext* ctx = nullptr);

struct AdamState {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t step = 0;
    std::vector<double> m;
    std::vector<double> v;
};

void adam_step(Mlp& net, std::span<const double> grads, AdamState& state);

struct GradcheckReport {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
};

/// Central differences with step h against backprop, entry by entry.
/// Relative error is |a - n| / max(|a|, |n|, floor).
GradcheckReport gradient_check(const Mlp& net, std::span<const double> input, std::span<const std::uint8_t> mask,
                               std::span<const double> target, LossKind loss, const SinrContext* ctx = nullptr,
                               double h = 1e-5, double floor = 1e-6);

/// Binary checkpoint; see docs/checkpoint_format.md.
void save_checkpoint(const std::filesystem::path& path, const Mlp& net, const AdamState* adam = nullptr,
                     const std::string& metadata_json = "{}");

struct Checkpoint {
    Mlp net;
    bool has_adam = false;
    AdamState adam;
    std::string metadata_json;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace cnoma
