#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pso/dataset.hpp"
#include "pso/diffusion.hpp"
#include "pso/grid.hpp"
#include "pso/optimizer.hpp"

namespace pso {

enum class DistillWeighting {
    uniform, // plain squared error on x0
    min_snr, // squared error on x0 scaled by min(1, SNR(t_n))
};

inline DistillWeighting distill_weighting_from_string(const std::string& s) {
    if (s == "uniform") return DistillWeighting::uniform;
    if (s == "min-snr") return DistillWeighting::min_snr;
    throw ConfigError("unknown distillation weighting '" + s + "'");
}

inline std::string to_string(DistillWeighting w) { return w == DistillWeighting::uniform ? "uniform" : "min-snr"; }

struct DistillConfig {
    long steps = 4000;
    std::size_t batch = 256;
    double lr = 1e-4;
    double lr_min = 1e-5;
    std::uint64_t seed = 0;
    int teacher_steps = 50; // DDIM steps for a rollout from T-1; shorter rollouts scale down
    DistillWeighting weighting = DistillWeighting::uniform;
    std::size_t train_samples_per_condition = 8192;
    std::uint64_t data_seed = 0;
};

/// Number of DDIM steps used for a teacher rollout that starts at t.
inline int rollout_steps(int t, int teacher_steps, int T) {
    const int k = static_cast<int>(std::ceil(static_cast<double>(teacher_steps) * t / (T - 1)));
    return std::clamp(k, 1, t + 1);
}

inline double distill_weight(DistillWeighting w, double alpha_bar) {
    if (w == DistillWeighting::uniform) return 1.0;
    return std::min(1.0, alpha_bar / (1.0 - alpha_bar));
}

/// Trajectory-distillation surrogate: the student starts as a copy of the
/// teacher and, at every grid time t_n (n = 1..N), regresses its implied clean
/// point onto the teacher's deterministic DDIM endpoint started from the same
/// x_{t_n}. Batch element i uses grid index n = 1 + i mod N.
inline TrainResult distill_student(const Denoiser& teacher, const SyntheticDataset& data, const NoiseSchedule& sched,
                                   const TimeGrid& grid, const DistillConfig& cfg) {
    if (cfg.batch == 0) throw ContractError("distillation batch size must be positive");
    TrainResult res{teacher, {}};
    const LabeledPoints cache = data.generate(cfg.train_samples_per_condition, cfg.data_seed);
    SeededRng rng(splitmix64(cfg.seed ^ 0x64697374696cULL));
    Adam opt(res.net.num_params(), {.lr = cfg.lr});
    const int N = grid.N();
    const std::size_t B = cfg.batch;

    for (long step = 0; step < cfg.steps; ++step) {
        // Draw the batch grouped by grid index so each group shares one rollout schedule.
        std::vector<std::vector<std::size_t>> groups(static_cast<std::size_t>(N) + 1);
        std::vector<Vec2> xt(B);
        std::vector<int> cond(B), tcol(B), nidx(B);
        for (std::size_t i = 0; i < B; ++i) {
            const auto j = rng.uniform_index(cache.size());
            const int n = 1 + static_cast<int>(i % static_cast<std::size_t>(N));
            nidx[i] = n;
            cond[i] = cache.conditions[j];
            tcol[i] = grid.t(n);
            xt[i] = forward_reparam(cache.points[j], grid.alpha_bar(n), rng.normal2());
            groups[static_cast<std::size_t>(n)].push_back(i);
        }
        std::vector<Vec2> target(B);
        for (int n = 1; n <= N; ++n) {
            const auto& g = groups[static_cast<std::size_t>(n)];
            if (g.empty()) continue;
            Matrix x(2, g.size());
            std::vector<int> gc(g.size());
            for (std::size_t k = 0; k < g.size(); ++k) {
                x.set_column2(k, xt[g[k]]);
                gc[k] = cond[g[k]];
            }
            const auto ts = ddim_timesteps(grid.t(n), rollout_steps(grid.t(n), cfg.teacher_steps, sched.T()));
            const Matrix end = ddim_rollout(teacher, std::move(x), gc, ts, sched);
            for (std::size_t k = 0; k < g.size(); ++k) target[g[k]] = end.column2(k);
        }

        Tape tape(res.net);
        const auto h = tape.record(points_to_matrix(xt), tcol, cond);
        const Matrix& eps = tape.output(h);
        Matrix seed(2, B);
        double total = 0.0;
        for (std::size_t i = 0; i < B; ++i) {
            const double ab = grid.alpha_bar(nidx[i]);
            const double w = distill_weight(cfg.weighting, ab);
            const Vec2 r = x0_from_eps(xt[i], ab, eps.column2(i)) - target[i];
            total += w * r.squared_norm();
            // d x0 / d eps = -sqrt(1 - ab) / sqrt(ab)
            const double dx0_deps = -std::sqrt(1.0 - ab) / std::sqrt(ab);
            seed.set_column2(i, (2.0 * w * dx0_deps / static_cast<double>(B)) * r);
        }
        const double loss = total / static_cast<double>(B);
        if (!std::isfinite(loss)) throw TrainingFailure("distillation diverged", step);
        tape.seed(h, seed);
        res.loss_curve.push_back(loss);
        opt.set_lr(cosine_lr(cfg.lr, cfg.lr_min, step, cfg.steps));
        opt.step(res.net, backprop(res.net, tape, loss));
    }
    return res;
}

} // namespace pso
