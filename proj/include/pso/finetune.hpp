#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "pso/dataset.hpp"
#include "pso/diffusion.hpp"
#include "pso/optimizer.hpp"
#include "pso/pso_loss.hpp"
#include "pso/sampler.hpp"

namespace pso {

/// One offline preference record: both endpoints share the condition.
struct PairRecord {
    int condition = 0;
    Vec2 target;
    Vec2 reference;
};

struct FinetuneConfig {
    long steps = 500;
    std::size_t batch = 64;
    double lr = 1e-5;
    PSOConfig pso = PSOConfig::offline_default();
    std::uint64_t seed = 0;
};

struct OnlineConfig {
    long rounds = 20;
    std::size_t pairs_per_round = 128;
    std::size_t batch = 32;
    double lr = 1e-5;
    PSOConfig pso = PSOConfig::online_default();
    std::uint64_t seed = 0;
};

struct StepMetrics {
    long step = 0;
    double loss = 0.0;
    double mean_margin = 0.0;
    double implicit_accuracy = 0.0;
    std::size_t pairs = 0;
};

struct FinetuneResult {
    Denoiser net;
    std::uint64_t reference_hash = 0;
    std::vector<StepMetrics> metrics;
    std::vector<std::string> warnings;
};

namespace detail {

inline StepMetrics step_metrics(long step, const PSOLossResult& r) {
    StepMetrics m;
    m.step = step;
    m.loss = r.loss;
    m.pairs = r.margins.size();
    m.mean_margin = std::accumulate(r.margins.begin(), r.margins.end(), 0.0) / static_cast<double>(m.pairs);
    m.implicit_accuracy = r.implicit_accuracy;
    return m;
}

inline void check_condition(const Denoiser& net, int c) {
    if (c < 0 || c >= net.arch().num_conditions) throw InputDomainError("condition " + std::to_string(c) + " out of range");
}

inline void check_step_params(const Denoiser& net, long step) {
    for (double p : net.params())
        if (!std::isfinite(p)) throw TrainingFailure("parameters became non-finite", step);
}

} // namespace detail

/// Offline PSO over a fixed pair dataset. Each step draws `batch` records with
/// replacement and fresh, independent forward noises for both branches.
inline FinetuneResult finetune_offline(const Denoiser& student, std::span<const PairRecord> pairs,
                                       const TimeGrid& grid, const FinetuneConfig& cfg) {
    cfg.pso.validate();
    const FrozenReference ref(student);
    FinetuneResult res{student, ref.hash(), {}, {}};
    if (cfg.steps <= 0) return res;
    if (pairs.empty()) throw ContractError("finetune_offline needs a non-empty pair dataset");
    if (cfg.batch == 0) throw ContractError("fine-tune batch size must be positive");
    for (const auto& p : pairs) detail::check_condition(res.net, p.condition);
    SeededRng rng(splitmix64(cfg.seed ^ 0x6f66666c696eULL));
    Adam opt(res.net.num_params(), {.lr = cfg.lr});
    std::vector<PairBatch> batch(cfg.batch);
    for (long step = 0; step < cfg.steps; ++step) {
        for (auto& pb : batch) {
            const PairRecord& rec = pairs[rng.uniform_index(pairs.size())];
            pb.condition = rec.condition;
            pb.mode = PairingMode::offline;
            pb.target = forward_trajectory(rec.target, rec.condition, rng, grid);
            pb.reference = forward_trajectory(rec.reference, rec.condition, rng, grid);
        }
        PSOLossResult r;
        try {
            r = pso_offline_loss(res.net, ref, batch, cfg.pso, grid);
        } catch (const NumericError& e) {
            throw TrainingFailure(std::string("offline fine-tune diverged: ") + e.what(), step);
        }
        res.metrics.push_back(detail::step_metrics(step, r));
        opt.step(res.net, r.grad);
        detail::check_step_params(res.net, step);
    }
    return res;
}

/// Online PSO in rounds: sample pairs_per_round trajectory pairs from the
/// current student (conditions cycled), label them with the reward, then run
/// one shuffled epoch over the surviving pairs.
inline FinetuneResult finetune_online(const Denoiser& student, std::span<const int> conditions, const RewardModel& rm,
                                      const TimeGrid& grid, const OnlineConfig& cfg) {
    cfg.pso.validate();
    const FrozenReference ref(student);
    FinetuneResult res{student, ref.hash(), {}, {}};
    if (cfg.rounds <= 0) return res;
    if (conditions.empty()) throw ContractError("finetune_online needs at least one condition");
    if (cfg.batch == 0 || cfg.pairs_per_round == 0) throw ContractError("online batch and round sizes must be positive");
    for (int c : conditions) detail::check_condition(res.net, c);
    SeededRng shuffle_rng(splitmix64(cfg.seed ^ 0x6f6e6c696e65ULL));
    Adam opt(res.net.num_params(), {.lr = cfg.lr});
    long step = 0;
    for (long round = 0; round < cfg.rounds; ++round) {
        const std::size_t P = cfg.pairs_per_round;
        std::vector<int> cond(2 * P);
        std::vector<SeededRng> rngs;
        rngs.reserve(2 * P);
        const std::uint64_t round_seed = splitmix64(cfg.seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(round + 1));
        for (std::size_t i = 0; i < 2 * P; ++i) {
            cond[i] = conditions[(i / 2) % conditions.size()];
            rngs.push_back(SeededRng::substream(round_seed, i));
        }
        std::vector<Trajectory> trs;
        try {
            trs = sample_trajectories(res.net, std::span<const int>(cond), std::span<SeededRng>(rngs), grid);
        } catch (const NumericError& e) {
            throw TrainingFailure(std::string("online sampling diverged: ") + e.what(), step);
        }
        std::vector<PairBatch> labeled;
        for (std::size_t j = 0; j < P; ++j)
            if (auto p = label_pair(trs[2 * j], trs[2 * j + 1], rm)) labeled.push_back(std::move(*p));
        if (labeled.empty()) {
            res.warnings.push_back("round " + std::to_string(round) + " skipped: every pair tied");
            continue;
        }
        std::vector<std::size_t> order(labeled.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t end = std::min(order.size(), start + cfg.batch);
            std::vector<PairBatch> mb;
            mb.reserve(end - start);
            for (std::size_t k = start; k < end; ++k) mb.push_back(labeled[order[k]]);
            PSOLossResult r;
            try {
                r = pso_online_loss(res.net, ref, mb, cfg.pso, grid);
            } catch (const NumericError& e) {
                throw TrainingFailure(std::string("online fine-tune diverged: ") + e.what(), step);
            }
            res.metrics.push_back(detail::step_metrics(step, r));
            opt.step(res.net, r.grad);
            detail::check_step_params(res.net, step);
            ++step;
        }
    }
    return res;
}

/// Full-trajectory PSO: each step pairs forward draws of target points with
/// reference trajectories sampled fresh from the current student.
inline FinetuneResult finetune_full(const Denoiser& student, const LabeledPoints& targets, const TimeGrid& grid,
                                    const FinetuneConfig& cfg) {
    cfg.pso.validate();
    const FrozenReference ref(student);
    FinetuneResult res{student, ref.hash(), {}, {}};
    if (cfg.steps <= 0) return res;
    if (targets.size() == 0) throw ContractError("finetune_full needs a non-empty target set");
    if (cfg.batch == 0) throw ContractError("fine-tune batch size must be positive");
    for (int c : targets.conditions) detail::check_condition(res.net, c);
    SeededRng rng(splitmix64(cfg.seed ^ 0x66756c6cULL));
    Adam opt(res.net.num_params(), {.lr = cfg.lr});
    const std::size_t B = cfg.batch;
    for (long step = 0; step < cfg.steps; ++step) {
        std::vector<PairBatch> batch(B);
        std::vector<int> cond(B);
        for (std::size_t i = 0; i < B; ++i) {
            const auto j = rng.uniform_index(targets.size());
            cond[i] = targets.conditions[j];
            batch[i].condition = cond[i];
            batch[i].mode = PairingMode::full;
            batch[i].target = forward_trajectory(targets.points[j], cond[i], rng, grid);
        }
        std::vector<SeededRng> rngs;
        rngs.reserve(B);
        const std::uint64_t step_seed = rng.next_u64();
        for (std::size_t i = 0; i < B; ++i) rngs.push_back(SeededRng::substream(step_seed, i));
        PSOLossResult r;
        try {
            auto refs = sample_trajectories(res.net, std::span<const int>(cond), std::span<SeededRng>(rngs), grid);
            for (std::size_t i = 0; i < B; ++i) batch[i].reference = std::move(refs[i]);
            r = pso_loss(res.net, ref, batch, cfg.pso, grid);
        } catch (const NumericError& e) {
            throw TrainingFailure(std::string("full fine-tune diverged: ") + e.what(), step);
        }
        res.metrics.push_back(detail::step_metrics(step, r));
        opt.step(res.net, r.grad);
        detail::check_step_params(res.net, step);
    }
    return res;
}

/// Contrast baseline: plain DDPM loss on target data applied to the student.
inline FinetuneResult naive_finetune(const Denoiser& student, const LabeledPoints& targets, const NoiseSchedule& sched,
                                     const FinetuneConfig& cfg) {
    FinetuneResult res{student, student.hash(), {}, {}};
    if (cfg.steps <= 0) return res;
    if (targets.size() == 0) throw ContractError("naive_finetune needs a non-empty target set");
    if (cfg.batch == 0) throw ContractError("fine-tune batch size must be positive");
    for (int c : targets.conditions) detail::check_condition(res.net, c);
    SeededRng rng(splitmix64(cfg.seed ^ 0x6e61697665ULL));
    Adam opt(res.net.num_params(), {.lr = cfg.lr});
    std::vector<Vec2> x0(cfg.batch);
    std::vector<int> c(cfg.batch);
    for (long step = 0; step < cfg.steps; ++step) {
        for (std::size_t i = 0; i < cfg.batch; ++i) {
            const auto j = rng.uniform_index(targets.size());
            x0[i] = targets.points[j];
            c[i] = targets.conditions[j];
        }
        LossAndGrad lg;
        try {
            lg = ddpm_loss(res.net, x0, c, rng, sched);
        } catch (const NumericError& e) {
            throw TrainingFailure(std::string("naive fine-tune diverged: ") + e.what(), step);
        }
        StepMetrics m;
        m.step = step;
        m.loss = lg.loss;
        m.pairs = cfg.batch;
        res.metrics.push_back(m);
        opt.step(res.net, lg.grad);
        detail::check_step_params(res.net, step);
    }
    return res;
}

} // namespace pso
