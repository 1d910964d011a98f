#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "pso/dataset.hpp"
#include "pso/denoiser.hpp"
#include "pso/error.hpp"
#include "pso/optimizer.hpp"
#include "pso/rng.hpp"
#include "pso/schedule.hpp"

namespace pso {

/// Anything that maps a batch of noisy points, timesteps and condition ids to
/// epsilon predictions. Denoiser is the production model; tests plug in
/// analytic predictors.
template <class M>
concept EpsPredictor = requires(const M& m, const Matrix& x, std::span<const int> t, std::span<const int> c) {
    { m.forward(x, t, c) } -> std::same_as<Matrix>;
};

// ---------------------------------------------------------------------------
// Forward process q

struct ForwardDraw {
    Vec2 x0;
    int t = 0;
    Vec2 eps;
    Vec2 xt;
};

inline ForwardDraw forward_diffuse(Vec2 x0, int t, SeededRng& rng, const NoiseSchedule& sched) {
    sched.check_timestep(t);
    ForwardDraw d{x0, t, rng.normal2(), {}};
    d.xt = forward_reparam(x0, sched.alpha_bar(t), d.eps);
    return d;
}

// ---------------------------------------------------------------------------
// DDPM epsilon-matching loss

struct LossAndGrad {
    double loss = 0.0;
    ParamGradient grad;
};

/// Mean over the batch of ||eps - eps_theta(x_t, t, c)||^2 for explicit draws.
inline LossAndGrad ddpm_loss(const Denoiser& net, std::span<const Vec2> x0, std::span<const int> cond,
                             std::span<const int> t, std::span<const Vec2> eps, const NoiseSchedule& sched) {
    const std::size_t B = x0.size();
    if (B == 0) throw ContractError("ddpm_loss needs a non-empty batch");
    if (cond.size() != B || t.size() != B || eps.size() != B) throw ContractError("ddpm_loss batch shape mismatch");
    Matrix xt(2, B);
    for (std::size_t i = 0; i < B; ++i) xt.set_column2(i, forward_reparam(x0[i], sched.alpha_bar(t[i]), eps[i]));
    Tape tape(net);
    const auto h = tape.record(xt, t, cond);
    const Matrix& out = tape.output(h);
    Matrix seed(2, B);
    double total = 0.0;
    const double scale = 2.0 / static_cast<double>(B);
    for (std::size_t i = 0; i < B; ++i) {
        const Vec2 r = out.column2(i) - eps[i];
        total += r.squared_norm();
        seed.set_column2(i, scale * r);
    }
    const double loss = total / static_cast<double>(B);
    tape.seed(h, seed);
    return {loss, backprop(net, tape, loss)};
}

/// Same loss with t ~ U{0..T-1} and eps ~ N(0, I) drawn from rng, element by element.
inline LossAndGrad ddpm_loss(const Denoiser& net, std::span<const Vec2> x0, std::span<const int> cond, SeededRng& rng,
                             const NoiseSchedule& sched) {
    if (x0.empty()) throw ContractError("ddpm_loss needs a non-empty batch");
    std::vector<int> t(x0.size());
    std::vector<Vec2> eps(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) {
        t[i] = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(sched.T())));
        eps[i] = rng.normal2();
    }
    return ddpm_loss(net, x0, cond, t, eps, sched);
}

// ---------------------------------------------------------------------------
// Deterministic DDIM sampling

/// Evenly spaced descending timesteps from t_start to 0 (n >= 2), or just
/// {t_start} for n == 1. Duplicates from rounding are dropped.
inline std::vector<int> ddim_timesteps(int t_start, int n_steps) {
    if (n_steps < 1) throw InputDomainError("ddim needs at least one step");
    if (n_steps == 1) return {t_start};
    std::vector<int> ts;
    for (int i = 0; i < n_steps; ++i) {
        const double frac = static_cast<double>(n_steps - 1 - i) / (n_steps - 1);
        const int t = static_cast<int>(std::lround(frac * t_start));
        if (ts.empty() || t < ts.back()) ts.push_back(t);
    }
    return ts;
}

/// Runs DDIM from states x (one column per sample) along the descending
/// timesteps; the last step jumps to the clean prediction. If `path` is
/// non-null it receives the state before every step plus the final output.
template <EpsPredictor Model>
Matrix ddim_rollout(const Model& model, Matrix x, std::span<const int> cond, std::span<const int> timesteps,
                    const NoiseSchedule& sched, std::vector<Matrix>* path = nullptr) {
    const std::size_t B = x.cols();
    std::vector<int> tcol(B);
    for (std::size_t s = 0; s < timesteps.size(); ++s) {
        const int t = timesteps[s];
        sched.check_timestep(t);
        if (path) path->push_back(x);
        std::fill(tcol.begin(), tcol.end(), t);
        const Matrix eps = model.forward(x, tcol, cond);
        const double ab = sched.alpha_bar(t);
        const bool last = s + 1 == timesteps.size();
        const double ab_next = last ? 1.0 : sched.alpha_bar(timesteps[s + 1]);
        const double a_next = std::sqrt(ab_next), s_next = std::sqrt(1.0 - ab_next);
        for (std::size_t b = 0; b < B; ++b) {
            const Vec2 e = eps.column2(b);
            const Vec2 x0 = x0_from_eps(x.column2(b), ab, e);
            x.set_column2(b, last ? x0 : a_next * x0 + s_next * e);
        }
    }
    if (path) path->push_back(x);
    return x;
}

struct DdimPath {
    int condition = 0;
    std::vector<int> timesteps;
    std::vector<Vec2> states; // states[i] is the input to step i; back() is the clean sample
    Vec2 sample() const { return states.back(); }
};

/// Single-sample DDIM from x_T ~ N(0, I) drawn from rng.
template <EpsPredictor Model>
DdimPath ddim_sample(const Model& model, int c, int n_steps, SeededRng& rng, const NoiseSchedule& sched) {
    if (n_steps < 1 || n_steps > sched.T()) throw InputDomainError("ddim n_steps outside [1, T]");
    DdimPath p;
    p.condition = c;
    p.timesteps = ddim_timesteps(sched.T() - 1, n_steps);
    Matrix x(2, 1);
    x.set_column2(0, rng.normal2());
    const int cc[1] = {c};
    std::vector<Matrix> path;
    ddim_rollout(model, std::move(x), cc, p.timesteps, sched, &path);
    for (const auto& m : path) p.states.push_back(m.column2(0));
    return p;
}

/// Batched DDIM endpoints: sample i uses SeededRng::substream(seed, i) for its
/// initial noise, so every endpoint is independent of the batch it is in.
template <EpsPredictor Model>
std::vector<Vec2> ddim_sample_batch(const Model& model, std::span<const int> cond, int n_steps, std::uint64_t seed,
                                    const NoiseSchedule& sched) {
    if (n_steps < 1 || n_steps > sched.T()) throw InputDomainError("ddim n_steps outside [1, T]");
    Matrix x(2, cond.size());
    for (std::size_t i = 0; i < cond.size(); ++i) {
        SeededRng rng = SeededRng::substream(seed, i);
        x.set_column2(i, rng.normal2());
    }
    const auto ts = ddim_timesteps(sched.T() - 1, n_steps);
    return matrix_to_points(ddim_rollout(model, std::move(x), cond, ts, sched));
}

// ---------------------------------------------------------------------------
// Teacher training

/// Cosine decay from lr to lr_min over `total` steps.
inline double cosine_lr(double lr, double lr_min, long step, long total) {
    if (total <= 1) return lr;
    const double frac = static_cast<double>(step) / static_cast<double>(total - 1);
    return lr_min + 0.5 * (lr - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

struct TeacherConfig {
    Architecture arch;
    long steps = 20000;
    std::size_t batch = 256;
    double lr = 1e-3;
    double lr_min = 1e-5;
    std::uint64_t seed = 0;
    std::size_t train_samples_per_condition = 8192;
    std::uint64_t data_seed = 0;
};

struct TrainResult {
    Denoiser net;
    std::vector<double> loss_curve;
};

/// Fits an epsilon-prediction teacher with the DDPM loss on a fixed cache of
/// dataset samples.
inline TrainResult train_teacher(const SyntheticDataset& data, const NoiseSchedule& sched, const TeacherConfig& cfg) {
    if (cfg.batch == 0) throw ContractError("teacher batch size must be positive");
    if (cfg.arch.num_conditions != data.num_conditions())
        throw ContractError("architecture condition count does not match dataset");
    if (cfg.arch.timesteps != sched.T()) throw ContractError("architecture T does not match schedule");
    TrainResult res{Denoiser::initialized(cfg.arch, cfg.seed), {}};
    const LabeledPoints cache = data.generate(cfg.train_samples_per_condition, cfg.data_seed);
    SeededRng rng(splitmix64(cfg.seed ^ 0x7465616368ULL));
    Adam opt(res.net.num_params(), {.lr = cfg.lr});
    std::vector<Vec2> x0(cfg.batch);
    std::vector<int> c(cfg.batch);
    for (long step = 0; step < cfg.steps; ++step) {
        for (std::size_t i = 0; i < cfg.batch; ++i) {
            const auto j = rng.uniform_index(cache.size());
            x0[i] = cache.points[j];
            c[i] = cache.conditions[j];
        }
        LossAndGrad lg;
        try {
            lg = ddpm_loss(res.net, x0, c, rng, sched);
        } catch (const NumericError& e) {
            throw TrainingFailure(std::string("teacher diverged: ") + e.what(), step);
        }
        res.loss_curve.push_back(lg.loss);
        opt.set_lr(cosine_lr(cfg.lr, cfg.lr_min, step, cfg.steps));
        opt.step(res.net, lg.grad);
    }
    return res;
}

} // namespace pso
