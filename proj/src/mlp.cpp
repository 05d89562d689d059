#include "cnoma/mlp.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "cnoma/core_model.hpp"
#include "cnoma/rng.hpp"
#include "cnoma/scenario_io.hpp"

namespace cnoma {

namespace {

constexpr double kDenominatorFloor = 1e-12;

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

void check_mask(std::span<const std::uint8_t> mask, std::size_t out) {
    if (!mask.empty() && mask.size() != out) {
        throw InvalidParameter("mask length " + std::to_string(mask.size()) + " does not match output dim " +
                               std::to_string(out));
    }
}

bool active(std::span<const std::uint8_t> mask, std::size_t i) { return mask.empty() || mask[i] != 0; }

// Pre-activations and activations of every layer for one input.
struct Trace {
    std::vector<std::vector<double>> pre;  // z per layer
    std::vector<std::vector<double>> post; // post[0] = input, post[l+1] = act(z_l)
};

Trace run(const Mlp& net, std::span<const double> input, std::span<const std::uint8_t> mask) {
    if (input.size() != net.input_dim()) {
        throw InvalidParameter("input length " + std::to_string(input.size()) + " does not match input dim " +
                               std::to_string(net.input_dim()));
    }
    check_mask(mask, net.output_dim());
    Trace t;
    t.post.emplace_back(input.begin(), input.end());
    const std::size_t layers = net.layer_count();
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t in = net.dims()[l];
        const std::size_t out = net.dims()[l + 1];
        const auto w = net.weights(l);
        const auto b = net.biases(l);
        const auto& x = t.post.back();
        std::vector<double> z(out);
        for (std::size_t o = 0; o < out; ++o) {
            double s = b[o];
            for (std::size_t i = 0; i < in; ++i) {
                s += w[o * in + i] * x[i];
            }
            z[o] = s;
        }
        std::vector<double> a(out, 0.0);
        if (l + 1 < layers) {
            for (std::size_t o = 0; o < out; ++o) {
                a[o] = z[o] > 0.0 ? z[o] : 0.0;
            }
        } else if (net.output_activation() == OutputActivation::Sigmoid) {
            for (std::size_t o = 0; o < out; ++o) {
                a[o] = active(mask, o) ? 1.0 / (1.0 + std::exp(-z[o])) : 0.0;
            }
        } else {
            double zmax = -std::numeric_limits<double>::infinity();
            for (std::size_t o = 0; o < out; ++o) {
                if (active(mask, o)) {
                    zmax = std::max(zmax, z[o]);
                }
            }
            double total = 0.0;
            for (std::size_t o = 0; o < out; ++o) {
                if (active(mask, o)) {
                    a[o] = std::exp(z[o] - zmax);
                    total += a[o];
                }
            }
            if (total > 0.0) {
                for (auto& v : a) {
                    v /= total;
                }
            }
        }
        t.pre.push_back(std::move(z));
        t.post.push_back(std::move(a));
    }
    return t;
}

// d(sinr loss part)/d(pred) for fixed order; returns the loss part too.
double sinr_part(std::span<const double> pred, std::span<const double> target, const SinrContext& ctx,
                 std::vector<double>* grad) {
    const std::size_t k = pred.size();
    const auto order = descending_order(target);
    const auto tp = sinr_terms(pred, order, ctx);
    const auto tt = sinr_terms(target, order, ctx);
    const double m = static_cast<double>(tp.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < tp.size(); ++i) {
        loss += std::abs(tp[i] - tt[i]) / m;
    }
    if (!grad) {
        return loss;
    }
    grad->assign(k, 0.0);
    const double n = static_cast<double>(ctx.gains.size());
    std::size_t term = 0;
    for (std::size_t r = 0; r < k; ++r) {
        const std::size_t user = order[r];
        for (std::size_t s = 0; s <= r; ++s, ++term) {
            const double coeff = sign(tp[term] - tt[term]) / m;
            if (coeff == 0.0) {
                continue;
            }
            const std::size_t sig = order[s];
            for (const auto& g : ctx.gains) {
                const double gp = g[user] * ctx.p_max;
                double weaker = 0.0;
                for (std::size_t t = s + 1; t < k; ++t) {
                    weaker += pred[order[t]];
                }
                const double den = gp * weaker + ctx.betas[user];
                if (den <= kDenominatorFloor) {
                    // Clamped: constant denominator, derivative only in the numerator.
                    (*grad)[sig] += coeff * gp / kDenominatorFloor / n;
                    continue;
                }
                (*grad)[sig] += coeff * gp / den / n;
                const double d_weaker = -coeff * gp * pred[sig] * gp / (den * den) / n;
                for (std::size_t t = s + 1; t < k; ++t) {
                    (*grad)[order[t]] += d_weaker;
                }
            }
        }
    }
    return loss;
}

double output_loss(std::span<const double> pred, std::span<const double> target, LossKind loss,
                   const SinrContext* ctx, std::vector<double>* grad) {
    if (pred.size() != target.size()) {
        throw InvalidParameter("prediction and target lengths differ");
    }
    const std::size_t k = pred.size();
    const double value = loss_mae(pred, target);
    if (grad) {
        grad->assign(k, 0.0);
        for (std::size_t i = 0; i < k; ++i) {
            (*grad)[i] = sign(pred[i] - target[i]) / static_cast<double>(k);
        }
    }
    if (loss == LossKind::Mae) {
        return value;
    }
    if (!ctx) {
        throw InvalidParameter("MAE+SINR loss needs a SINR context");
    }
    if (ctx->users() != k) {
        throw InvalidParameter("SINR context user count does not match the output dim");
    }
    std::vector<double> g2;
    const double extra = sinr_part(pred, target, *ctx, grad ? &g2 : nullptr);
    if (grad) {
        for (std::size_t i = 0; i < k; ++i) {
            (*grad)[i] += g2[i];
        }
    }
    return value + extra;
}

// Little-endian byte I/O.
void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}
void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}
void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
public:
    Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}
    std::uint64_t u(int bytes) {
        need(static_cast<std::size_t>(bytes));
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        }
        pos_ += static_cast<std::size_t>(bytes);
        return v;
    }
    std::uint32_t u32() { return static_cast<std::uint32_t>(u(4)); }
    std::uint64_t u64() { return u(8); }
    double f64() { return std::bit_cast<double>(u(8)); }
    std::uint8_t u8() { return static_cast<std::uint8_t>(u(1)); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n) {
        if (pos_ + n > data_.size()) {
            throw std::runtime_error(path_ + ": truncated checkpoint");
        }
    }
    std::string data_;
    std::string path_;
    std::size_t pos_ = 0;
};

constexpr char kMagic[8] = {'C', 'N', 'O', 'M', 'A', 'M', 'L', 'P'};
constexpr std::uint32_t kVersion = 1;

} // namespace

Mlp::Mlp(std::vector<std::size_t> dims, std::uint64_t seed, OutputActivation output)
    : dims_(std::move(dims)), seed_(seed), output_(output) {
    layout();
    RngStream rng(seed, 0x6d6c70 /* "mlp" */);
    for (std::size_t l = 0; l < layer_count(); ++l) {
        const double limit = std::sqrt(6.0 / static_cast<double>(dims_[l]));
        for (double& w : weights(l)) {
            w = (2.0 * rng.uniform() - 1.0) * limit;
        }
    }
}

Mlp Mlp::zeros(std::vector<std::size_t> dims, OutputActivation output) {
    Mlp net;
    net.dims_ = std::move(dims);
    net.output_ = output;
    net.layout();
    return net;
}

void Mlp::layout() {
    if (dims_.size() < 2) {
        throw InvalidParameter("an MLP needs at least an input and an output dim");
    }
    for (auto d : dims_) {
        if (d == 0) {
            throw InvalidParameter("layer dims must be positive");
        }
    }
    offsets_.clear();
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
        offsets_.push_back(total);
        total += dims_[l] * dims_[l + 1] + dims_[l + 1];
    }
    params_.assign(total, 0.0);
}

std::span<double> Mlp::weights(std::size_t l) {
    return {params_.data() + offsets_[l], dims_[l] * dims_[l + 1]};
}
std::span<double> Mlp::biases(std::size_t l) {
    return {params_.data() + offsets_[l] + dims_[l] * dims_[l + 1], dims_[l + 1]};
}
std::span<const double> Mlp::weights(std::size_t l) const {
    return {params_.data() + offsets_[l], dims_[l] * dims_[l + 1]};
}
std::span<const double> Mlp::biases(std::size_t l) const {
    return {params_.data() + offsets_[l] + dims_[l] * dims_[l + 1], dims_[l + 1]};
}

std::vector<double> Mlp::forward(std::span<const double> input, std::span<const std::uint8_t> mask) const {
    return run(*this, input, mask).post.back();
}

std::vector<std::size_t> predictor_dims(std::size_t users) {
    switch (users) {
    case 3: return {9, 20, 30, 20, 10, 3};
    case 4: return {16, 35, 50, 35, 12, 4};
    default: {
        // Same shape family, scaled to K^2 inputs.
        const std::size_t in = users * users;
        return {in, 2 * in + 2, 3 * in + 3, 2 * in + 2, in + 1, users};
    }
    }
}

double loss_mae(std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size()) {
        throw InvalidParameter("prediction and target lengths differ");
    }
    if (pred.empty()) {
        return 0.0;
    }
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        s += std::abs(pred[i] - target[i]);
    }
    return s / static_cast<double>(pred.size());
}

void SinrContext::validate() const {
    if (betas.empty()) {
        throw InvalidParameter("SINR context has no users");
    }
    if (gains.empty()) {
        throw InvalidParameter("SINR context needs at least one gain draw");
    }
    for (const auto& g : gains) {
        if (g.size() != betas.size()) {
            throw InvalidParameter("gain draw length does not match user count");
        }
    }
}

SinrContext make_sinr_context(std::span<const double> lambdas, std::span<const double> betas, double p_max,
                              std::size_t count, std::uint64_t seed) {
    if (lambdas.size() != betas.size()) {
        throw InvalidParameter("lambdas and betas must have equal length");
    }
    SinrContext ctx;
    ctx.betas.assign(betas.begin(), betas.end());
    ctx.p_max = p_max;
    RngStream rng(seed, 0x73696e72 /* "sinr" */);
    ctx.gains.resize(count, std::vector<double>(lambdas.size()));
    for (auto& g : ctx.gains) {
        for (std::size_t i = 0; i < lambdas.size(); ++i) {
            g[i] = rng.exponential(lambdas[i]);
        }
    }
    return ctx;
}

std::vector<std::size_t> descending_order(std::span<const double> alpha) {
    std::vector<std::size_t> order(alpha.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return alpha[a] > alpha[b]; });
    return order;
}

std::vector<double> sinr_terms(std::span<const double> alpha, std::span<const std::size_t> order,
                               const SinrContext& ctx) {
    ctx.validate();
    const std::size_t k = alpha.size();
    if (order.size() != k || ctx.users() != k) {
        throw InvalidParameter("allocation, order and context sizes differ");
    }
    std::vector<double> terms;
    terms.reserve(k * (k + 1) / 2);
    const double n = static_cast<double>(ctx.gains.size());
    for (std::size_t r = 0; r < k; ++r) {
        const std::size_t user = order[r];
        for (std::size_t s = 0; s <= r; ++s) {
            double weaker = 0.0;
            for (std::size_t t = s + 1; t < k; ++t) {
                weaker += alpha[order[t]];
            }
            double mean = 0.0;
            for (const auto& g : ctx.gains) {
                const double gp = g[user] * ctx.p_max;
                const double den = std::max(gp * weaker + ctx.betas[user], kDenominatorFloor);
                mean += gp * alpha[order[s]] / den;
            }
            terms.push_back(mean / n);
        }
    }
    return terms;
}

double loss_mae_plus_sinr(std::span<const double> pred, std::span<const double> target, const SinrContext& ctx) {
    return output_loss(pred, target, LossKind::MaeSinr, &ctx, nullptr);
}

double evaluate_loss(const Mlp& net, std::span<const double> input, std::span<const std::uint8_t> mask,
                     std::span<const double> target, LossKind loss, const SinrContext* ctx) {
    const auto out = net.forward(input, mask);
    return output_loss(out, target, loss, ctx, nullptr);
}

Gradients backprop(const Mlp& net, std::span<const double> input, std::span<const std::uint8_t> mask,
                   std::span<const double> target, LossKind loss, const SinrContext* ctx) {
    const Trace t = run(net, input, mask);
    const auto& y = t.post.back();
    std::vector<double> dy;
    Gradients g;
    g.loss = output_loss(y, target, loss, ctx, &dy);
    g.values.assign(net.parameters().size(), 0.0);

    // Masked softmax Jacobian: dz_i = y_i (dy_i - sum_j y_j dy_j) on active outputs.
    const std::size_t out = net.output_dim();
    std::vector<double> dz(out, 0.0);
    if (net.output_activation() == OutputActivation::Sigmoid) {
        for (std::size_t i = 0; i < out; ++i) {
            if (active(mask, i)) {
                dz[i] = dy[i] * y[i] * (1.0 - y[i]);
            }
        }
    } else {
        double dot = 0.0;
        for (std::size_t i = 0; i < out; ++i) {
            if (active(mask, i)) {
                dot += y[i] * dy[i];
            }
        }
        for (std::size_t i = 0; i < out; ++i) {
            if (active(mask, i)) {
                dz[i] = y[i] * (dy[i] - dot);
            }
        }
    }

    for (std::size_t l = net.layer_count(); l-- > 0;) {
        const std::size_t in = net.dims()[l];
        const std::size_t o = net.dims()[l + 1];
        const auto w = net.weights(l);
        const auto& x = t.post[l];
        const std::size_t w_off = static_cast<std::size_t>(w.data() - net.parameters().data());
        const std::size_t b_off = w_off + in * o;
        for (std::size_t r = 0; r < o; ++r) {
            g.values[b_off + r] = dz[r];
            for (std::size_t c = 0; c < in; ++c) {
                g.values[w_off + r * in + c] = dz[r] * x[c];
            }
        }
        if (l == 0) {
            break;
        }
        std::vector<double> dx(in, 0.0);
        for (std::size_t r = 0; r < o; ++r) {
            for (std::size_t c = 0; c < in; ++c) {
                dx[c] += w[r * in + c] * dz[r];
            }
        }
        const auto& zprev = t.pre[l - 1];
        for (std::size_t c = 0; c < in; ++c) {
            dx[c] = zprev[c] > 0.0 ? dx[c] : 0.0;
        }
        dz = std::move(dx);
    }
    return g;
}

void adam_step(Mlp& net, std::span<const double> grads, AdamState& s) {
    auto& p = net.parameters();
    if (grads.size() != p.size()) {
        throw InvalidParameter("gradient size does not match parameter count");
    }
    if (s.m.size() != p.size()) {
        s.m.assign(p.size(), 0.0);
        s.v.assign(p.size(), 0.0);
    }
    ++s.step;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    for (std::size_t i = 0; i < p.size(); ++i) {
        s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * grads[i];
        s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * grads[i] * grads[i];
        const double mhat = s.m[i] / c1;
        const double vhat = s.v[i] / c2;
        p[i] -= s.learning_rate * mhat / (std::sqrt(vhat) + s.epsilon);
    }
}

GradcheckReport gradient_check(const Mlp& net, std::span<const double> input, std::span<const std::uint8_t> mask,
                               std::span<const double> target, LossKind loss, const SinrContext* ctx, double h,
                               double floor) {
    const Gradients analytic = backprop(net, input, mask, target, loss, ctx);
    Mlp probe = net;
    GradcheckReport report;
    auto& p = probe.parameters();
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double saved = p[i];
        p[i] = saved + h;
        const double up = evaluate_loss(probe, input, mask, target, loss, ctx);
        p[i] = saved - h;
        const double down = evaluate_loss(probe, input, mask, target, loss, ctx);
        p[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double a = analytic.values[i];
        const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
        report.max_relative_error = std::max(report.max_relative_error, err);
        ++report.checked;
    }
    return report;
}

void save_checkpoint(const std::filesystem::path& path, const Mlp& net, const AdamState* adam,
                     const std::string& metadata_json) {
    std::string out(kMagic, sizeof kMagic);
    put_u32(out, kVersion);
    put_u64(out, net.seed());
    out.push_back(static_cast<char>(net.output_activation()));
    put_u32(out, static_cast<std::uint32_t>(net.dims().size()));
    for (auto d : net.dims()) {
        put_u32(out, static_cast<std::uint32_t>(d));
    }
    for (double v : net.parameters()) {
        put_f64(out, v);
    }
    const bool has_adam = adam && adam->m.size() == net.parameters().size();
    out.push_back(static_cast<char>(has_adam ? 1 : 0));
    if (has_adam) {
        put_u64(out, adam->step);
        put_f64(out, adam->learning_rate);
        put_f64(out, adam->beta1);
        put_f64(out, adam->beta2);
        put_f64(out, adam->epsilon);
        for (double v : adam->m) {
            put_f64(out, v);
        }
        for (double v : adam->v) {
            put_f64(out, v);
        }
    }
    put_u32(out, static_cast<std::uint32_t>(metadata_json.size()));
    out += metadata_json;
    write_text_file(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error(path.string() + ": cannot open checkpoint");
    }
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r(std::move(data), path.string());
    if (r.bytes(8) != std::string(kMagic, sizeof kMagic)) {
        throw std::runtime_error(path.string() + ": not a checkpoint (bad magic)");
    }
    const auto version = r.u32();
    if (version != kVersion) {
        throw std::runtime_error(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    }
    const auto seed = r.u64();
    const auto act = r.u8();
    if (act > 1) {
        throw std::runtime_error(path.string() + ": unknown output activation " + std::to_string(act));
    }
    const auto ndims = r.u32();
    std::vector<std::size_t> dims(ndims);
    for (auto& d : dims) {
        d = r.u32();
    }
    Checkpoint ck;
    ck.net = Mlp(dims, seed, static_cast<OutputActivation>(act)); // parameters are overwritten below
    for (double& v : ck.net.parameters()) {
        v = r.f64();
    }
    ck.has_adam = r.u8() != 0;
    if (ck.has_adam) {
        ck.adam.step = r.u64();
        ck.adam.learning_rate = r.f64();
        ck.adam.beta1 = r.f64();
        ck.adam.beta2 = r.f64();
        ck.adam.epsilon = r.f64();
        const std::size_t n = ck.net.parameters().size();
        ck.adam.m.resize(n);
        ck.adam.v.resize(n);
        for (double& v : ck.adam.m) {
            v = r.f64();
        }
        for (double& v : ck.adam.v) {
            v = r.f64();
        }
    }
    const auto meta = r.u32();
    ck.metadata_json = r.bytes(meta);
    if (!r.done()) {
        throw std::runtime_error(path.string() + ": trailing bytes after checkpoint");
    }
    return ck;
}

} // namespace cnoma
