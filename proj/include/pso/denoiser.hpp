#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "pso/error.hpp"
#include "pso/rng.hpp"
#include "pso/tensor.hpp"

namespace pso {

/// Shape of the epsilon-prediction MLP. The input row layout is
/// [x (2) | sin(w_k t/T) (F) | cos(w_k t/T) (F) | condition embedding (D)]
/// with w_k = pi * (k + 1) / 2, k = 0..F-1.
struct Architecture {
    int timesteps = 1000;      // T; valid t is [0, T)
    int num_conditions = 4;    // K
    int time_freqs = 8;        // F
    int cond_dim = 8;          // D
    std::vector<int> hidden{128, 128, 128};

    static constexpr int data_dim = 2;

    int input_dim() const { return data_dim + 2 * time_freqs + cond_dim; }

    /// Layer widths from input to output, e.g. {26, 128, 128, 128, 2}.
    std::vector<int> widths() const {
        std::vector<int> w{input_dim()};
        w.insert(w.end(), hidden.begin(), hidden.end());
        w.push_back(data_dim);
        return w;
    }

    std::size_t param_count() const {
        std::size_t n = static_cast<std::size_t>(num_conditions) * static_cast<std::size_t>(cond_dim);
        const auto w = widths();
        for (std::size_t l = 1; l < w.size(); ++l)
            n += static_cast<std::size_t>(w[l]) * static_cast<std::size_t>(w[l - 1] + 1);
        return n;
    }

    /// Compact descriptor stored in checkpoints; two architectures are
    /// interchangeable iff their descriptors match.
    std::string descriptor() const {
        std::string s = "mlp-eps;act=asig;temb=lin;T=" + std::to_string(timesteps) +
                        ";K=" + std::to_string(num_conditions) + ";F=" + std::to_string(time_freqs) +
                        ";D=" + std::to_string(cond_dim) + ";hidden=";
        for (std::size_t i = 0; i < hidden.size(); ++i) s += (i ? "x" : "") + std::to_string(hidden[i]);
        return s;
    }

    friend bool operator==(const Architecture&, const Architecture&) = default;
};

namespace detail {

// Activation: x * gate(x) with the algebraic sigmoid gate(x) = (1 + x / sqrt(1 + x^2)) / 2.
// Smooth like SiLU but needs only sqrt and division, which vectorize.
inline double gate(double z) { return 0.5 + 0.5 * z / std::sqrt(1.0 + z * z); }
inline double activation(double z) { return z * gate(z); }
inline double activation_grad(double z) {
    const double r = 1.0 / std::sqrt(1.0 + z * z);
    return 0.5 + 0.5 * z * r + 0.5 * z * r * r * r;
}

using v4d = double __attribute__((vector_size(32)));

inline v4d load4(const double* p) {
    v4d v;
    std::memcpy(&v, p, sizeof v);
    return v;
}
inline void store4(double* p, v4d v) { std::memcpy(p, &v, sizeof v); }

// Y = W X + b, W is (out x in) row-major. Register-tiled over 4 output rows
// by 8 batch columns; per-element summation order is always b_j, then
// k = 0..in-1, whatever the tiling.
inline void linear_forward(const double* W, const double* bias, const Matrix& X, Matrix& Y) {
    const std::size_t in = X.rows(), out = Y.rows(), B = X.cols();
    const std::size_t B8 = B - B % 8;
    std::size_t j = 0;
    for (; j + 4 <= out; j += 4) {
        const double* w0 = W + j * in;
        const double* w1 = w0 + in;
        const double* w2 = w1 + in;
        const double* w3 = w2 + in;
        for (std::size_t b = 0; b < B8; b += 8) {
            v4d a0l = v4d{} + bias[j], a0h = a0l;
            v4d a1l = v4d{} + bias[j + 1], a1h = a1l;
            v4d a2l = v4d{} + bias[j + 2], a2h = a2l;
            v4d a3l = v4d{} + bias[j + 3], a3h = a3l;
            for (std::size_t k = 0; k < in; ++k) {
                const double* x = X.row(k) + b;
                const v4d xl = load4(x), xh = load4(x + 4);
                a0l += w0[k] * xl;
                a0h += w0[k] * xh;
                a1l += w1[k] * xl;
                a1h += w1[k] * xh;
                a2l += w2[k] * xl;
                a2h += w2[k] * xh;
                a3l += w3[k] * xl;
                a3h += w3[k] * xh;
            }
            store4(Y.row(j) + b, a0l);
            store4(Y.row(j) + b + 4, a0h);
            store4(Y.row(j + 1) + b, a1l);
            store4(Y.row(j + 1) + b + 4, a1h);
            store4(Y.row(j + 2) + b, a2l);
            store4(Y.row(j + 2) + b + 4, a2h);
            store4(Y.row(j + 3) + b, a3l);
            store4(Y.row(j + 3) + b + 4, a3h);
        }
        for (std::size_t b = B8; b < B; ++b) {
            double s0 = bias[j], s1 = bias[j + 1], s2 = bias[j + 2], s3 = bias[j + 3];
            for (std::size_t k = 0; k < in; ++k) {
                const double xv = X(k, b);
                s0 += w0[k] * xv;
                s1 += w1[k] * xv;
                s2 += w2[k] * xv;
                s3 += w3[k] * xv;
            }
            Y(j, b) = s0;
            Y(j + 1, b) = s1;
            Y(j + 2, b) = s2;
            Y(j + 3, b) = s3;
        }
    }
    for (; j < out; ++j) {
        double* __restrict y = Y.row(j);
        for (std::size_t b = 0; b < B; ++b) y[b] = bias[j];
        const double* wj = W + j * in;
        for (std::size_t k = 0; k < in; ++k) {
            const double* __restrict x = X.row(k);
            const double a = wj[k];
            for (std::size_t b = 0; b < B; ++b) y[b] += a * x[b];
        }
    }
}

// Deterministic dot product with four interleaved partial sums so the
// compiler can vectorize it without reassociation flags.
inline double dot(const double* __restrict a, const double* __restrict b, std::size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

inline double row_sum(const double* a, std::size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i];
        s1 += a[i + 1];
        s2 += a[i + 2];
        s3 += a[i + 3];
    }
    for (; i < n; ++i) s0 += a[i];
    return (s0 + s1) + (s2 + s3);
}

inline double hsum(v4d v) { return (v[0] + v[1]) + (v[2] + v[3]); }

// gW[j, k] += sum_b delta[j, b] * in[k, b];  gb[j] += sum_b delta[j, b].
// Tiled over 4 j by 2 k with vector partial sums over b.
inline void weight_grad(const Matrix& delta, const Matrix& in, double* gW, double* gb) {
    const std::size_t nout = delta.rows(), nin = in.rows(), B = delta.cols();
    for (std::size_t j = 0; j < nout; ++j) gb[j] += row_sum(delta.row(j), B);
    const std::size_t B4 = B - B % 4;
    auto tail = [&](std::size_t j, std::size_t k) {
        double t = 0.0;
        for (std::size_t b = B4; b < B; ++b) t += delta(j, b) * in(k, b);
        return t;
    };
    std::size_t j = 0;
    for (; j + 4 <= nout; j += 4) {
        const double* d0 = delta.row(j);
        const double* d1 = delta.row(j + 1);
        const double* d2 = delta.row(j + 2);
        const double* d3 = delta.row(j + 3);
        std::size_t k = 0;
        for (; k + 2 <= nin; k += 2) {
            const double* x0 = in.row(k);
            const double* x1 = in.row(k + 1);
            v4d a00{}, a01{}, a10{}, a11{}, a20{}, a21{}, a30{}, a31{};
            for (std::size_t b = 0; b < B4; b += 4) {
                const v4d u0 = load4(x0 + b), u1 = load4(x1 + b);
                const v4d e0 = load4(d0 + b), e1 = load4(d1 + b), e2 = load4(d2 + b), e3 = load4(d3 + b);
                a00 += e0 * u0;
                a01 += e0 * u1;
                a10 += e1 * u0;
                a11 += e1 * u1;
                a20 += e2 * u0;
                a21 += e2 * u1;
                a30 += e3 * u0;
                a31 += e3 * u1;
            }
            gW[j * nin + k] += hsum(a00) + tail(j, k);
            gW[j * nin + k + 1] += hsum(a01) + tail(j, k + 1);
            gW[(j + 1) * nin + k] += hsum(a10) + tail(j + 1, k);
            gW[(j + 1) * nin + k + 1] += hsum(a11) + tail(j + 1, k + 1);
            gW[(j + 2) * nin + k] += hsum(a20) + tail(j + 2, k);
            gW[(j + 2) * nin + k + 1] += hsum(a21) + tail(j + 2, k + 1);
            gW[(j + 3) * nin + k] += hsum(a30) + tail(j + 3, k);
            gW[(j + 3) * nin + k + 1] += hsum(a31) + tail(j + 3, k + 1);
        }
        for (; k < nin; ++k)
            for (std::size_t jj = 0; jj < 4; ++jj) gW[(j + jj) * nin + k] += dot(delta.row(j + jj), in.row(k), B);
    }
    for (; j < nout; ++j)
        for (std::size_t k = 0; k < nin; ++k) gW[j * nin + k] += dot(delta.row(j), in.row(k), B);
}

// dIn[k, b] = sum_j W[j, k] * delta[j, b]; the transpose of linear_forward's
// tiling, summing j = 0..out-1 in order.
inline void input_grad(const double* W, const Matrix& delta, Matrix& dIn) {
    const std::size_t nout = delta.rows(), nin = dIn.rows(), B = delta.cols();
    const std::size_t B8 = B - B % 8;
    std::size_t k = 0;
    for (; k + 4 <= nin; k += 4) {
        for (std::size_t b = 0; b < B8; b += 8) {
            v4d a0l{}, a0h{}, a1l{}, a1h{}, a2l{}, a2h{}, a3l{}, a3h{};
            for (std::size_t j = 0; j < nout; ++j) {
                const double* d = delta.row(j) + b;
                const v4d dl = load4(d), dh = load4(d + 4);
                const double* w = W + j * nin + k;
                a0l += w[0] * dl;
                a0h += w[0] * dh;
                a1l += w[1] * dl;
                a1h += w[1] * dh;
                a2l += w[2] * dl;
                a2h += w[2] * dh;
                a3l += w[3] * dl;
                a3h += w[3] * dh;
            }
            store4(dIn.row(k) + b, a0l);
            store4(dIn.row(k) + b + 4, a0h);
            store4(dIn.row(k + 1) + b, a1l);
            store4(dIn.row(k + 1) + b + 4, a1h);
            store4(dIn.row(k + 2) + b, a2l);
            store4(dIn.row(k + 2) + b + 4, a2h);
            store4(dIn.row(k + 3) + b, a3l);
            store4(dIn.row(k + 3) + b + 4, a3h);
        }
        for (std::size_t b = B8; b < B; ++b)
            for (std::size_t kk = 0; kk < 4; ++kk) {
                double acc = 0.0;
                for (std::size_t j = 0; j < nout; ++j) acc += W[j * nin + k + kk] * delta(j, b);
                dIn(k + kk, b) = acc;
            }
    }
    for (; k < nin; ++k)
        for (std::size_t b = 0; b < B; ++b) {
            double acc = 0.0;
            for (std::size_t j = 0; j < nout; ++j) acc += W[j * nin + k] * delta(j, b);
            dIn(k, b) = acc;
        }
}

} // namespace detail

/// Gradient of a scalar loss with respect to every Denoiser parameter, in the
/// same flat layout as Denoiser::params().
struct ParamGradient {
    std::vector<double> values;
    double loss = 0.0;

    ParamGradient() = default;
    explicit ParamGradient(std::size_t n, double loss_value = 0.0) : values(n, 0.0), loss(loss_value) {}

    std::size_t size() const noexcept { return values.size(); }
};

/// Epsilon-prediction MLP with sinusoidal time features, a learned condition
/// embedding, and smooth gated-linear hidden activations (detail::activation).
///
/// Parameters live in one flat array: the condition embedding table
/// (K x D, row-major) first, then for each layer in forward order its weight
/// matrix (out x in, row-major) followed by its bias vector.
class Denoiser {
public:
    Denoiser() = default;

    /// Zero-initialised network.
    explicit Denoiser(Architecture arch) : arch_(std::move(arch)) {
        validate_arch();
        params_.assign(arch_.param_count(), 0.0);
        build_offsets();
    }

    /// LeCun-normal weights, zero biases, standard-normal condition embeddings.
    static Denoiser initialized(Architecture arch, std::uint64_t seed) {
        Denoiser net(std::move(arch));
        SeededRng rng(seed);
        for (std::size_t i = 0; i < net.embed_size(); ++i) net.params_[i] = rng.normal();
        const auto w = net.arch_.widths();
        for (std::size_t l = 0; l + 1 < w.size(); ++l) {
            const double scale = 1.0 / std::sqrt(static_cast<double>(w[l]));
            const std::size_t n = static_cast<std::size_t>(w[l]) * static_cast<std::size_t>(w[l + 1]);
            double* W = net.params_.data() + net.weight_offset_[l];
            for (std::size_t i = 0; i < n; ++i) W[i] = scale * rng.normal();
        }
        return net;
    }

    static Denoiser from_params(Architecture arch, std::vector<double> params) {
        Denoiser net(std::move(arch));
        if (params.size() != net.params_.size())
            throw ContractError("parameter count " + std::to_string(params.size()) + " does not match architecture (" +
                                std::to_string(net.params_.size()) + ")");
        net.params_ = std::move(params);
        return net;
    }

    const Architecture& arch() const noexcept { return arch_; }
    std::size_t num_params() const noexcept { return params_.size(); }
    std::span<const double> params() const noexcept { return params_; }
    std::span<double> params() noexcept { return params_; }
    std::size_t num_layers() const noexcept { return weight_offset_.size(); }

    /// FNV-1a over the raw parameter bytes.
    std::uint64_t hash() const {
        std::uint64_t h = 1469598103934665603ULL;
        const auto* bytes = reinterpret_cast<const unsigned char*>(params_.data());
        for (std::size_t i = 0; i < params_.size() * sizeof(double); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
        return h;
    }

    void check_inputs(std::span<const int> t, std::span<const int> c) const {
        for (int ti : t)
            if (ti < 0 || ti >= arch_.timesteps)
                throw InputDomainError("timestep " + std::to_string(ti) + " outside [0, " +
                                       std::to_string(arch_.timesteps) + ")");
        for (int ci : c)
            if (ci < 0 || ci >= arch_.num_conditions)
                throw InputDomainError("condition id " + std::to_string(ci) + " outside [0, " +
                                       std::to_string(arch_.num_conditions) + ")");
    }

    /// Builds the (input_dim x B) input matrix for a batch.
    Matrix make_input(const Matrix& x, std::span<const int> t, std::span<const int> c) const {
        const std::size_t B = x.cols();
        if (x.rows() != 2 || t.size() != B || c.size() != B)
            throw ContractError("denoiser batch shape mismatch");
        check_inputs(t, c);
        Matrix in(static_cast<std::size_t>(arch_.input_dim()), B);
        std::memcpy(in.row(0), x.row(0), B * sizeof(double));
        std::memcpy(in.row(1), x.row(1), B * sizeof(double));
        const std::size_t F = static_cast<std::size_t>(arch_.time_freqs);
        const std::size_t D = static_cast<std::size_t>(arch_.cond_dim);
        const double* embed = params_.data();
        for (std::size_t b = 0; b < B; ++b) {
            const double tau = static_cast<double>(t[b]) / arch_.timesteps;
            for (std::size_t k = 0; k < F; ++k) {
                const double w = std::numbers::pi * static_cast<double>(k + 1) / 2.0;
                in(2 + k, b) = std::sin(w * tau);
                in(2 + F + k, b) = std::cos(w * tau);
            }
            const double* e = embed + static_cast<std::size_t>(c[b]) * D;
            for (std::size_t d = 0; d < D; ++d) in(2 + 2 * F + d, b) = e[d];
        }
        return in;
    }

    /// Batched epsilon prediction; column b of the result depends only on
    /// column b of the inputs.
    Matrix forward(const Matrix& x, std::span<const int> t, std::span<const int> c) const {
        Matrix h = make_input(x, t, c);
        const std::size_t L = num_layers();
        for (std::size_t l = 0; l < L; ++l) {
            Matrix z(static_cast<std::size_t>(widths_[l + 1]), h.cols());
            detail::linear_forward(weight(l), bias(l), h, z);
            if (l + 1 < L)
                for (std::size_t i = 0; i < z.size(); ++i) z.data()[i] = detail::activation(z.data()[i]);
            h = std::move(z);
        }
        return h;
    }

    Vec2 forward(Vec2 x, int t, int c) const {
        Matrix xm(2, 1);
        xm.set_column2(0, x);
        const int tt[1] = {t};
        const int cc[1] = {c};
        return forward(xm, tt, cc).column2(0);
    }

    const double* weight(std::size_t l) const { return params_.data() + weight_offset_[l]; }
    const double* bias(std::size_t l) const { return params_.data() + bias_offset_[l]; }
    std::size_t weight_offset(std::size_t l) const { return weight_offset_[l]; }
    std::size_t bias_offset(std::size_t l) const { return bias_offset_[l]; }
    const std::vector<int>& widths() const noexcept { return widths_; }
    std::size_t embed_size() const {
        return static_cast<std::size_t>(arch_.num_conditions) * static_cast<std::size_t>(arch_.cond_dim);
    }

private:
    void validate_arch() const {
        if (arch_.timesteps < 1 || arch_.num_conditions < 1 || arch_.time_freqs < 0 || arch_.cond_dim < 0)
            throw ContractError("invalid architecture: " + arch_.descriptor());
        for (int h : arch_.hidden)
            if (h < 1) throw ContractError("invalid hidden width in " + arch_.descriptor());
    }

    void build_offsets() {
        widths_ = arch_.widths();
        weight_offset_.clear();
        bias_offset_.clear();
        std::size_t off = embed_size();
        for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
            weight_offset_.push_back(off);
            off += static_cast<std::size_t>(widths_[l]) * static_cast<std::size_t>(widths_[l + 1]);
            bias_offset_.push_back(off);
            off += static_cast<std::size_t>(widths_[l + 1]);
        }
    }

    Architecture arch_;
    std::vector<double> params_;
    std::vector<int> widths_;
    std::vector<std::size_t> weight_offset_;
    std::vector<std::size_t> bias_offset_;
};

/// Records denoiser forward passes so that a scalar loss assembled from their
/// outputs can be differentiated in reverse mode. The loss code evaluates the
/// network through record(), computes its scalar from the returned outputs,
/// then deposits dLoss/dOutput for each record via seed().
class Tape {
public:
    using Handle = std::size_t;

    explicit Tape(const Denoiser& net) : net_(&net) {}

    const Denoiser& net() const noexcept { return *net_; }

    Handle record(const Matrix& x, std::span<const int> t, std::span<const int> c) {
        Entry e;
        e.t.assign(t.begin(), t.end());
        e.c.assign(c.begin(), c.end());
        e.acts.push_back(net_->make_input(x, t, c));
        const std::size_t L = net_->num_layers();
        const auto& w = net_->widths();
        for (std::size_t l = 0; l < L; ++l) {
            Matrix z(static_cast<std::size_t>(w[l + 1]), x.cols());
            detail::linear_forward(net_->weight(l), net_->bias(l), e.acts.back(), z);
            if (l + 1 < L) {
                Matrix h(z.rows(), z.cols());
                for (std::size_t i = 0; i < z.size(); ++i) h.data()[i] = detail::activation(z.data()[i]);
                e.pre.push_back(std::move(z));
                e.acts.push_back(std::move(h));
            } else {
                e.output = std::move(z);
            }
        }
        e.upstream = Matrix(2, x.cols());
        entries_.push_back(std::move(e));
        return entries_.size() - 1;
    }

    const Matrix& output(Handle h) const { return entries_.at(h).output; }

    /// Accumulates dLoss/dOutput for a recorded pass.
    void seed(Handle h, const Matrix& grad_output) {
        Entry& e = entries_.at(h);
        if (grad_output.rows() != 2 || grad_output.cols() != e.output.cols())
            throw ContractError("seed gradient shape mismatch");
        for (std::size_t i = 0; i < grad_output.size(); ++i) e.upstream.data()[i] += grad_output.data()[i];
    }

    void seed_column(Handle h, std::size_t col, Vec2 g) {
        Entry& e = entries_.at(h);
        e.upstream(0, col) += g.x;
        e.upstream(1, col) += g.y;
    }

    std::size_t size() const noexcept { return entries_.size(); }

private:
    friend ParamGradient backprop(const Denoiser& net, const Tape& tape, double loss);

    struct Entry {
        std::vector<int> t, c;
        std::vector<Matrix> acts; // acts[l] is the input to layer l
        std::vector<Matrix> pre;  // pre-activations of hidden layers
        Matrix output;
        Matrix upstream;
    };

    const Denoiser* net_;
    std::vector<Entry> entries_;
};

/// Reverse-mode gradient of `loss` through every pass recorded on `tape`.
/// Entries are processed in recording order so the reduction is deterministic.
inline ParamGradient backprop(const Denoiser& net, const Tape& tape, double loss) {
    if (!std::isfinite(loss)) throw NumericError("non-finite loss in backprop: " + std::to_string(loss), loss);
    if (&tape.net() != &net) throw ContractError("tape was recorded against a different network");
    ParamGradient grad(net.num_params(), loss);
    double* g = grad.values.data();
    const auto& w = net.widths();
    const std::size_t L = net.num_layers();
    const std::size_t F = static_cast<std::size_t>(net.arch().time_freqs);
    const std::size_t D = static_cast<std::size_t>(net.arch().cond_dim);

    for (const auto& e : tape.entries_) {
        const std::size_t B = e.output.cols();
        Matrix delta = e.upstream; // dLoss / d(pre-activation of current layer)
        for (std::size_t li = L; li-- > 0;) {
            const Matrix& in = e.acts[li];
            const std::size_t nin = static_cast<std::size_t>(w[li]);
            double* gW = g + net.weight_offset(li);
            double* gb = g + net.bias_offset(li);
            detail::weight_grad(delta, in, gW, gb);
            const bool need_input_grad = li > 0 || D > 0;
            if (!need_input_grad) break;
            Matrix dIn(nin, B);
            detail::input_grad(net.weight(li), delta, dIn);
            if (li > 0) {
                const Matrix& z = e.pre[li - 1];
                for (std::size_t i = 0; i < dIn.size(); ++i) dIn.data()[i] *= detail::activation_grad(z.data()[i]);
                delta = std::move(dIn);
            } else {
                // Condition embedding rows of the input.
                for (std::size_t b = 0; b < B; ++b) {
                    double* ge = g + static_cast<std::size_t>(e.c[b]) * D;
                    for (std::size_t d = 0; d < D; ++d) ge[d] += dIn(2 + 2 * F + d, b);
                }
            }
        }
    }
    return grad;
}

} // namespace pso
