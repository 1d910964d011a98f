#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pso/denoiser.hpp"
#include "pso/error.hpp"
#include "pso/grid.hpp"
#include "pso/reward.hpp"
#include "pso/sampler.hpp"

namespace pso {

enum class PairingMode { full, offline, online };

inline const char* to_string(PairingMode m) {
    switch (m) {
    case PairingMode::full: return "full";
    case PairingMode::offline: return "offline";
    case PairingMode::online: return "online";
    }
    return "?";
}

/// beta is the regularisation weight; the data-branch reweighting omega is
/// held at 1 and every loss sums the grid indices n = 2..N (the deterministic
/// n = 1 transition never contributes).
struct PSOConfig {
    double beta = 5.0;
    static constexpr double omega = 1.0;

    static PSOConfig offline_default() { return {50.0}; }
    static PSOConfig online_default() { return {5.0}; }
    static PSOConfig full_default() { return {5.0}; }

    void validate() const {
        if (!(beta > 0.0) || !std::isfinite(beta)) throw ContractError("PSO beta must be positive and finite");
    }
};

/// Immutable snapshot of the student at fine-tune start (theta_pre).
class FrozenReference {
public:
    explicit FrozenReference(const Denoiser& net) : net_(net), hash_(net.hash()) {}
    const Denoiser& model() const noexcept { return net_; }
    std::uint64_t hash() const noexcept { return hash_; }

private:
    const Denoiser net_;
    const std::uint64_t hash_;
};

/// One matched training pair sharing a condition.
///   full:    target forward-from-data, reference generated
///   offline: both forward-from-data
///   online:  both generated and reward-labelled
struct PairBatch {
    int condition = 0;
    Trajectory target;
    Trajectory reference;
    PairingMode mode = PairingMode::full;
    bool labeled = true;

    PairBatch swapped() const {
        PairBatch p = *this;
        std::swap(p.target, p.reference);
        return p;
    }
};

struct PSOLossResult {
    double loss = 0.0;
    std::vector<double> margins; // pre-sigmoid margin per pair
    double implicit_accuracy = 0.0;
    ParamGradient grad;
};

/// -log sigmoid(m), evaluated without overflow.
inline double neg_log_sigmoid(double m) { return std::log1p(std::exp(-std::abs(m))) + std::max(-m, 0.0); }

/// Margin for a hand-assembled bracketed sum: m = -beta * sum.
inline double margin_from_sum(double beta, double bracket_sum) { return -beta * bracket_sum; }

namespace detail {

inline void check_pair(const PairBatch& p, PairingMode mode, int N) {
    if (p.mode != mode)
        throw ContractError(std::string("pair tagged ") + to_string(p.mode) + " passed to the " + to_string(mode) + " loss");
    if (p.target.condition != p.condition || p.reference.condition != p.condition)
        throw ContractError("pair branches do not share the pair condition");
    const Provenance want_target = mode == PairingMode::online ? Provenance::generated : Provenance::forward_from_data;
    const Provenance want_ref = mode == PairingMode::offline ? Provenance::forward_from_data : Provenance::generated;
    if (p.target.provenance != want_target || p.reference.provenance != want_ref)
        throw ContractError(std::string("branch provenance does not match pairing mode ") + to_string(mode));
    if (mode == PairingMode::online && !p.labeled) throw ContractError("online pair has not been reward-labelled");
    if (p.target.N() != N || p.reference.N() != N) throw ContractError("trajectory length does not match the grid");
}

// Which quantity a branch contributes at grid step n:
//   eps:  ||eps_n - eps(x_{t_n})||^2           (forward-from-data branch)
//   mean: ||x_{t_{n-1}} - mu(x_{t_n})||^2      (generated branch)
enum class BranchTerm { eps, mean };

struct BranchEval {
    std::vector<double> theta; // per column
    std::vector<double> pre;
    Tape::Handle handle = 0;
};

// Evaluates one branch for all pairs at grid step n under the student (on
// the tape) and the frozen reference.
inline BranchEval eval_branch(Tape& tape, const Denoiser& ref, std::span<const PairBatch> pairs, bool target_branch,
                              BranchTerm term, int n, const TimeGrid& grid) {
    const std::size_t P = pairs.size();
    const std::size_t ni = static_cast<std::size_t>(n);
    Matrix x(2, P);
    std::vector<int> t(P, grid.t(n)), c(P);
    for (std::size_t i = 0; i < P; ++i) {
        const Trajectory& tr = target_branch ? pairs[i].target : pairs[i].reference;
        x.set_column2(i, tr.states[ni]);
        c[i] = pairs[i].condition;
    }
    BranchEval ev;
    ev.handle = tape.record(x, t, c);
    const Matrix& eth = tape.output(ev.handle);
    const Matrix epre = ref.forward(x, t, c);
    ev.theta.resize(P);
    ev.pre.resize(P);
    const double ab = grid.alpha_bar(n);
    const double a_prev = std::sqrt(grid.alpha_bar(n - 1));
    for (std::size_t i = 0; i < P; ++i) {
        const Trajectory& tr = target_branch ? pairs[i].target : pairs[i].reference;
        if (term == BranchTerm::eps) {
            const Vec2 e = tr.noises[ni];
            ev.theta[i] = squared_distance(e, eth.column2(i));
            ev.pre[i] = squared_distance(e, epre.column2(i));
        } else {
            const Vec2 xn = tr.states[ni], next = tr.states[ni - 1];
            ev.theta[i] = squared_distance(next, a_prev * x0_from_eps(xn, ab, eth.column2(i)));
            ev.pre[i] = squared_distance(next, a_prev * x0_from_eps(xn, ab, epre.column2(i)));
        }
    }
    return ev;
}

// d(branch value)/d(eps_theta) for column i, scaled by `coef`.
inline Vec2 branch_grad(const Tape& tape, const BranchEval& ev, const PairBatch& pair, bool target_branch,
                        BranchTerm term, int n, const TimeGrid& grid, std::size_t i, double coef) {
    const Trajectory& tr = target_branch ? pair.target : pair.reference;
    const std::size_t ni = static_cast<std::size_t>(n);
    const Vec2 eth = tape.output(ev.handle).column2(i);
    if (term == BranchTerm::eps) return (2.0 * coef) * (eth - tr.noises[ni]);
    const double ab = grid.alpha_bar(n);
    const double a_prev = std::sqrt(grid.alpha_bar(n - 1));
    const Vec2 mu = a_prev * x0_from_eps(tr.states[ni], ab, eth);
    const double dmu_deps = -a_prev * std::sqrt(1.0 - ab) / std::sqrt(ab);
    return (-2.0 * coef * dmu_deps) * (tr.states[ni - 1] - mu);
}

// Shared engine for the three objectives. For pair i the margin is
//   m_i = -sum_{n=N..2} w_n [ w_T,n (T_theta - T_pre) - w_R,n (R_theta - R_pre) ]
// where T / R are the target / reference branch terms. The bracket is formed
// as (target part) - (reference part) so exchanging branches negates it
// exactly in floating point.
inline PSOLossResult pso_objective(const Denoiser& student, const FrozenReference& ref,
                                   std::span<const PairBatch> pairs, PairingMode mode, const PSOConfig& cfg,
                                   const TimeGrid& grid) {
    cfg.validate();
    if (pairs.empty()) throw ContractError("PSO loss needs at least one pair");
    if (student.arch() != ref.model().arch()) throw ContractError("student and frozen reference architectures differ");
    const int N = grid.N();
    if (N < 2) throw ContractError("PSO losses need N >= 2: the n = 1 transition is excluded from training");
    for (const auto& p : pairs) check_pair(p, mode, N);

    const BranchTerm tterm = mode == PairingMode::online ? BranchTerm::mean : BranchTerm::eps;
    const BranchTerm rterm = mode == PairingMode::offline ? BranchTerm::eps : BranchTerm::mean;
    const std::size_t P = pairs.size();

    struct StepEval {
        int n;
        double outer, wt, wr;
        BranchEval tgt, rf;
    };
    Tape tape(student);
    std::vector<StepEval> steps;
    std::vector<double> margin(P, 0.0);
    std::vector<double> bracket_sum(P, 0.0);
    for (int n = N; n >= 2; --n) {
        const double s2 = grid.sigma2(n);
        if (!(s2 > 0.0)) throw ContractError("policy variance is zero at grid step n = " + std::to_string(n));
        StepEval se{n, 1.0, 1.0, 1.0, {}, {}};
        switch (mode) {
        case PairingMode::full: se.wr = 1.0 / (2.0 * s2); break;
        case PairingMode::offline: break;
        case PairingMode::online: se.outer = 1.0 / (2.0 * s2); break;
        }
        se.tgt = eval_branch(tape, ref.model(), pairs, true, tterm, n, grid);
        se.rf = eval_branch(tape, ref.model(), pairs, false, rterm, n, grid);
        for (std::size_t i = 0; i < P; ++i) {
            const double tpart = se.wt * (se.tgt.theta[i] - se.tgt.pre[i]);
            const double rpart = se.wr * (se.rf.theta[i] - se.rf.pre[i]);
            bracket_sum[i] += se.outer * (tpart - rpart);
        }
        steps.push_back(std::move(se));
    }

    PSOLossResult res;
    res.margins.resize(P);
    double total = 0.0;
    std::size_t positive = 0;
    std::vector<double> dm(P); // dLoss / dmargin
    for (std::size_t i = 0; i < P; ++i) {
        const double m = margin_from_sum(cfg.beta, bracket_sum[i]);
        if (!std::isfinite(m)) throw NumericError("non-finite PSO margin", m);
        res.margins[i] = m;
        total += neg_log_sigmoid(m);
        if (m > 0.0) ++positive;
        // d/dm -log sigmoid(m) = -sigmoid(-m)
        dm[i] = -(1.0 / (1.0 + std::exp(m))) / static_cast<double>(P);
    }
    res.loss = total / static_cast<double>(P);
    res.implicit_accuracy = static_cast<double>(positive) / static_cast<double>(P);

    for (const auto& se : steps) {
        Matrix gt(2, P), gr(2, P);
        for (std::size_t i = 0; i < P; ++i) {
            // dm/d(T_theta) = -beta * outer * wt ; dm/d(R_theta) = +beta * outer * wr
            const double ct = dm[i] * (-cfg.beta * se.outer * se.wt);
            const double cr = dm[i] * (cfg.beta * se.outer * se.wr);
            gt.set_column2(i, branch_grad(tape, se.tgt, pairs[i], true, tterm, se.n, grid, i, ct));
            gr.set_column2(i, branch_grad(tape, se.rf, pairs[i], false, rterm, se.n, grid, i, cr));
        }
        tape.seed(se.tgt.handle, gt);
        tape.seed(se.rf.handle, gr);
    }
    res.grad = backprop(student, tape, res.loss);
    return res;
}

} // namespace detail

/// Full-trajectory objective: forward data branch (epsilon terms) against a
/// generated reference branch (policy-mean terms weighted by 1 / (2 sigma^2)).
inline PSOLossResult pso_loss(const Denoiser& student, const FrozenReference& ref, std::span<const PairBatch> pairs,
                              const PSOConfig& cfg, const TimeGrid& grid) {
    return detail::pso_objective(student, ref, pairs, PairingMode::full, cfg, grid);
}

/// Offline objective: both branches are forward draws from stored endpoints.
inline PSOLossResult pso_offline_loss(const Denoiser& student, const FrozenReference& ref,
                                      std::span<const PairBatch> pairs, const PSOConfig& cfg, const TimeGrid& grid) {
    return detail::pso_objective(student, ref, pairs, PairingMode::offline, cfg, grid);
}

/// Online objective: both branches are generated, reward-labelled trajectories.
inline PSOLossResult pso_online_loss(const Denoiser& student, const FrozenReference& ref,
                                     std::span<const PairBatch> pairs, const PSOConfig& cfg, const TimeGrid& grid) {
    return detail::pso_objective(student, ref, pairs, PairingMode::online, cfg, grid);
}

/// Higher-reward endpoint becomes the target; exact ties are discarded.
inline std::optional<PairBatch> label_pair(const Trajectory& a, const Trajectory& b, const RewardModel& rm) {
    if (a.condition != b.condition) throw ContractError("label_pair needs trajectories with the same condition");
    const double ra = rm(a.endpoint(), a.condition);
    const double rb = rm(b.endpoint(), b.condition);
    if (ra == rb) return std::nullopt;
    PairBatch p;
    p.condition = a.condition;
    p.mode = PairingMode::online;
    p.labeled = true;
    p.target = ra > rb ? a : b;
    p.reference = ra > rb ? b : a;
    return p;
}

} // namespace pso
