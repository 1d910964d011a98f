#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pso/diffusion.hpp"
#include "pso/grid.hpp"
#include "pso/rng.hpp"

namespace pso {

enum class Provenance { generated, forward_from_data };

inline const char* to_string(Provenance p) {
    return p == Provenance::generated ? "generated-by-student" : "forward-from-data";
}

/// One path through the few-step grid, indexed by n = 0..N.
///
/// generated:          states[N..0], means[n] and noises[n] for n >= 2 with
///                     states[n-1] = means[n] + scales[n] * noises[n];
///                     states[0] = means[1] = f(states[1], t_1) and scales[1] = 0.
/// forward-from-data:  states[0] = x0 and, for n = 2..N, states[n] is the
///                     forward draw at t_n with noise noises[n]. Slot 1 is NaN;
///                     nothing downstream may read it.
struct Trajectory {
    int condition = 0;
    Provenance provenance = Provenance::generated;
    std::vector<Vec2> states;
    std::vector<Vec2> means;
    std::vector<Vec2> noises;
    std::vector<double> scales;

    int N() const noexcept { return static_cast<int>(states.size()) - 1; }
    Vec2 endpoint() const { return states.front(); }
};

struct StepRecord {
    Vec2 next;
    Vec2 mean;
    Vec2 noise;
    double scale = 0.0;
};

namespace detail {

inline Vec2 nan2() {
    const double q = std::numeric_limits<double>::quiet_NaN();
    return {q, q};
}

template <EpsPredictor Model>
Matrix predict_x0(const Model& model, const Matrix& x, int t, double alpha_bar, std::span<const int> cond) {
    std::vector<int> tcol(x.cols(), t);
    const Matrix eps = model.forward(x, tcol, cond);
    Matrix x0(2, x.cols());
    for (std::size_t b = 0; b < x.cols(); ++b) x0.set_column2(b, x0_from_eps(x.column2(b), alpha_bar, eps.column2(b)));
    return x0;
}

inline void check_finite(const Matrix& x, int n) {
    for (std::size_t i = 0; i < x.size(); ++i)
        if (!std::isfinite(x.data()[i]))
            throw NumericError("non-finite state at grid step n = " + std::to_string(n), x.data()[i]);
}

} // namespace detail

/// f_theta(x_{t_n}, t_n, c) for a batch.
template <EpsPredictor Model>
Matrix predict_x0(const Model& model, const Matrix& x, int n, std::span<const int> cond, const TimeGrid& grid) {
    return detail::predict_x0(model, x, grid.t(n), grid.alpha_bar(n), cond);
}

/// Policy mean mu(x_{t_n}) = sqrt(alpha_bar(t_{n-1})) f(x_{t_n}, t_n, c) for a batch, n >= 2.
template <EpsPredictor Model>
Matrix policy_mean(const Model& model, const Matrix& x, int n, std::span<const int> cond, const TimeGrid& grid) {
    Matrix m = predict_x0(model, x, n, cond, grid);
    const double a = std::sqrt(grid.alpha_bar(n - 1));
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] *= a;
    return m;
}

/// One stochastic transition x_{t_n} -> x_{t_{n-1}} for n >= 2:
/// x' = sqrt(ab_{n-1}) f(x, t_n, c) + sqrt(1 - ab_{n-1}) z.
template <EpsPredictor Model>
StepRecord mdp_step(const Model& model, Vec2 x, int n, int c, SeededRng& rng, const TimeGrid& grid) {
    if (n == 1) throw ContractError("mdp_step called for n = 1; the last transition is mdp_final_step");
    if (n < 1 || n > grid.N()) throw InputDomainError("grid index " + std::to_string(n) + " outside [2, N]");
    Matrix xm(2, 1);
    xm.set_column2(0, x);
    const int cc[1] = {c};
    StepRecord r;
    r.mean = policy_mean(model, xm, n, cc, grid).column2(0);
    r.scale = std::sqrt(1.0 - grid.alpha_bar(n - 1));
    r.noise = rng.normal2();
    r.next = r.mean + r.scale * r.noise;
    return r;
}

/// Deterministic last transition: returns f(x_{t_1}, t_1, c) and draws nothing.
template <EpsPredictor Model>
Vec2 mdp_final_step(const Model& model, Vec2 x, int c, const TimeGrid& grid) {
    Matrix xm(2, 1);
    xm.set_column2(0, x);
    const int cc[1] = {c};
    return predict_x0(model, xm, 1, cc, grid).column2(0);
}

/// Samples one trajectory per entry of `cond`, trajectory i drawing all of its
/// noise from rngs[i]. Columns are evaluated together but never interact.
template <EpsPredictor Model>
std::vector<Trajectory> sample_trajectories(const Model& model, std::span<const int> cond, std::span<SeededRng> rngs,
                                            const TimeGrid& grid) {
    if (rngs.size() != cond.size()) throw ContractError("one rng per trajectory required");
    const std::size_t B = cond.size();
    const int N = grid.N();
    std::vector<Trajectory> out(B);
    Matrix x(2, B);
    for (std::size_t b = 0; b < B; ++b) {
        auto& tr = out[b];
        tr.condition = cond[b];
        tr.provenance = Provenance::generated;
        tr.states.assign(static_cast<std::size_t>(N) + 1, {});
        tr.means.assign(static_cast<std::size_t>(N) + 1, detail::nan2());
        tr.noises.assign(static_cast<std::size_t>(N) + 1, detail::nan2());
        tr.scales.assign(static_cast<std::size_t>(N) + 1, 0.0);
        tr.states[static_cast<std::size_t>(N)] = rngs[b].normal2();
        x.set_column2(b, tr.states[static_cast<std::size_t>(N)]);
    }
    for (int n = N; n >= 2; --n) {
        const Matrix mu = policy_mean(model, x, n, cond, grid);
        const double scale = std::sqrt(1.0 - grid.alpha_bar(n - 1));
        for (std::size_t b = 0; b < B; ++b) {
            auto& tr = out[b];
            const std::size_t i = static_cast<std::size_t>(n);
            tr.means[i] = mu.column2(b);
            tr.noises[i] = rngs[b].normal2();
            tr.scales[i] = scale;
            tr.states[i - 1] = tr.means[i] + scale * tr.noises[i];
            x.set_column2(b, tr.states[i - 1]);
        }
        detail::check_finite(x, n - 1);
    }
    const Matrix x0 = predict_x0(model, x, 1, cond, grid);
    detail::check_finite(x0, 0);
    for (std::size_t b = 0; b < B; ++b) {
        out[b].means[1] = x0.column2(b);
        out[b].states[0] = x0.column2(b);
    }
    return out;
}

template <EpsPredictor Model>
Trajectory sample_trajectory(const Model& model, int c, SeededRng& rng, const TimeGrid& grid) {
    const int cc[1] = {c};
    return sample_trajectories(model, std::span<const int>(cc), std::span<SeededRng>(&rng, 1), grid).front();
}

/// Endpoints of `cond.size()` trajectories, trajectory i seeded by substream(seed, i).
template <EpsPredictor Model>
std::vector<Vec2> sample_endpoints(const Model& model, std::span<const int> cond, std::uint64_t seed,
                                   const TimeGrid& grid) {
    std::vector<SeededRng> rngs;
    rngs.reserve(cond.size());
    for (std::size_t i = 0; i < cond.size(); ++i) rngs.push_back(SeededRng::substream(seed, i));
    const auto trs = sample_trajectories(model, cond, std::span<SeededRng>(rngs), grid);
    std::vector<Vec2> out(trs.size());
    for (std::size_t i = 0; i < trs.size(); ++i) out[i] = trs[i].endpoint();
    return out;
}

/// Recomputes policy means from the stored states of a generated trajectory.
template <EpsPredictor Model>
std::vector<Vec2> replay_means(const Model& model, const Trajectory& tr, const TimeGrid& grid) {
    std::vector<Vec2> means(tr.states.size(), detail::nan2());
    const int cc[1] = {tr.condition};
    Matrix xm(2, 1);
    for (int n = tr.N(); n >= 2; --n) {
        xm.set_column2(0, tr.states[static_cast<std::size_t>(n)]);
        means[static_cast<std::size_t>(n)] = policy_mean(model, xm, n, cc, grid).column2(0);
    }
    xm.set_column2(0, tr.states[1]);
    means[1] = predict_x0(model, xm, 1, cc, grid).column2(0);
    return means;
}

/// Independent forward draws of q at every grid time n = 2..N with the noise
/// recorded; slot 1 is left NaN because no loss may use it.
inline Trajectory forward_trajectory(Vec2 x0, int c, SeededRng& rng, const TimeGrid& grid) {
    const int N = grid.N();
    Trajectory tr;
    tr.condition = c;
    tr.provenance = Provenance::forward_from_data;
    tr.states.assign(static_cast<std::size_t>(N) + 1, detail::nan2());
    tr.noises.assign(static_cast<std::size_t>(N) + 1, detail::nan2());
    tr.states[0] = x0;
    for (int n = N; n >= 2; --n) {
        const std::size_t i = static_cast<std::size_t>(n);
        tr.noises[i] = rng.normal2();
        tr.states[i] = forward_reparam(x0, grid.alpha_bar(n), tr.noises[i]);
    }
    return tr;
}

// ---------------------------------------------------------------------------
// Euler-ancestral variant. States live in the variance-exploding
// parameterisation x_sigma = x0 + sigma eps; the epsilon network sees
// x_sigma / sqrt(1 + sigma^2) at the matching training timestep.

/// f(x_sigma, sigma_n) = x_sigma - sigma_n eps_theta for a batch.
template <EpsPredictor Model>
Matrix euler_predict_x0(const Model& model, const Matrix& x, int n, std::span<const int> cond, const EulerGrid& egrid) {
    const double s = egrid.sigma(n);
    const double in_scale = 1.0 / std::sqrt(1.0 + s * s);
    Matrix xin = x;
    for (std::size_t i = 0; i < xin.size(); ++i) xin.data()[i] *= in_scale;
    std::vector<int> tcol(x.cols(), egrid.t(n));
    const Matrix eps = model.forward(xin, tcol, cond);
    Matrix x0(2, x.cols());
    for (std::size_t i = 0; i < x0.size(); ++i) x0.data()[i] = x.data()[i] - s * eps.data()[i];
    return x0;
}

/// x_{n-1} = x + s_theta (down_n - sigma_n) + up_n z with s_theta = (x - f_theta) / sigma_n.
/// The recorded mean is the deterministic part and `scale` is up_n.
template <EpsPredictor Model>
StepRecord euler_ancestral_step(const Model& model, Vec2 x, int n, int c, SeededRng& rng, const EulerGrid& egrid) {
    if (n < 1 || n > egrid.N()) throw InputDomainError("euler grid index " + std::to_string(n) + " outside [1, N]");
    Matrix xm(2, 1);
    xm.set_column2(0, x);
    const int cc[1] = {c};
    const Vec2 f = euler_predict_x0(model, xm, n, cc, egrid).column2(0);
    const double s = egrid.sigma(n);
    const Vec2 score = (1.0 / s) * (x - f);
    StepRecord r;
    r.mean = x + (egrid.down(n) - s) * score;
    r.scale = egrid.up(n);
    if (r.scale > 0.0) {
        r.noise = rng.normal2();
        r.next = r.mean + r.scale * r.noise;
    } else {
        r.next = r.mean;
    }
    return r;
}

/// Full Euler-ancestral path from x_{sigma_N} = sqrt(1 + sigma_N^2) z.
template <EpsPredictor Model>
Trajectory sample_euler_trajectory(const Model& model, int c, SeededRng& rng, const EulerGrid& egrid) {
    const int N = egrid.N();
    Trajectory tr;
    tr.condition = c;
    tr.provenance = Provenance::generated;
    tr.states.assign(static_cast<std::size_t>(N) + 1, {});
    tr.means.assign(static_cast<std::size_t>(N) + 1, detail::nan2());
    tr.noises.assign(static_cast<std::size_t>(N) + 1, Vec2{});
    tr.scales.assign(static_cast<std::size_t>(N) + 1, 0.0);
    const double s = egrid.sigma(N);
    tr.states[static_cast<std::size_t>(N)] = std::sqrt(1.0 + s * s) * rng.normal2();
    for (int n = N; n >= 1; --n) {
        const std::size_t i = static_cast<std::size_t>(n);
        const StepRecord r = euler_ancestral_step(model, tr.states[i], n, c, rng, egrid);
        if (!r.next.finite()) throw NumericError("non-finite euler state at n = " + std::to_string(n - 1), r.next.x);
        tr.means[i] = r.mean;
        tr.noises[i] = r.noise;
        tr.scales[i] = r.scale;
        tr.states[i - 1] = r.next;
    }
    return tr;
}

} // namespace pso
