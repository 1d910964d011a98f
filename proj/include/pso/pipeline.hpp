#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "pso/config.hpp"
#include "pso/finetune.hpp"
#include "pso/metrics.hpp"
#include "pso/sampler.hpp"

namespace pso {

/// Everything a stage needs, resolved from one RunConfig.
struct Setup {
    RunConfig cfg;
    NoiseSchedule sched;
    TimeGrid grid;
    SyntheticDataset data;
    Architecture arch;
    RewardModel reward;

    explicit Setup(RunConfig c)
        : cfg(std::move(c)), sched(cfg.schedule()), grid(cfg.grid(sched)), data(cfg.dataset()),
          arch(cfg.architecture(data.num_conditions())), reward(cfg.reward(data)) {}

    int K() const { return data.num_conditions(); }
};

/// Condition ids 0..K-1, each repeated `per` times.
inline std::vector<int> condition_blocks(int K, std::size_t per) {
    std::vector<int> c;
    c.reserve(static_cast<std::size_t>(K) * per);
    for (int k = 0; k < K; ++k) c.insert(c.end(), per, k);
    return c;
}

inline std::vector<SampleSet> split_blocks(const std::vector<Vec2>& pts, int K, std::size_t per,
                                           const SampleProvenance& prov) {
    std::vector<SampleSet> out;
    for (int k = 0; k < K; ++k) {
        const auto first = pts.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(k) * per);
        out.push_back({k, {first, first + static_cast<std::ptrdiff_t>(per)}, prov});
    }
    return out;
}

/// `per` few-step samples per condition; sample i of the flattened batch uses
/// substream(seed, i).
inline std::vector<SampleSet> sample_student(const Denoiser& net, const TimeGrid& grid, int K, std::size_t per,
                                             std::uint64_t seed) {
    const auto cond = condition_blocks(K, per);
    return split_blocks(sample_endpoints(net, std::span<const int>(cond), seed, grid), K, per,
                        {net.hash(), grid.N(), seed});
}

inline std::vector<SampleSet> sample_teacher(const Denoiser& net, const NoiseSchedule& sched, int steps, int K,
                                             std::size_t per, std::uint64_t seed) {
    const auto cond = condition_blocks(K, per);
    return split_blocks(ddim_sample_batch(net, std::span<const int>(cond), steps, seed, sched), K, per,
                        {net.hash(), steps, seed});
}

inline std::vector<SampleSet> sample_data(const SyntheticDataset& data, std::size_t per, std::uint64_t seed) {
    std::vector<SampleSet> out;
    for (int k = 0; k < data.num_conditions(); ++k) out.push_back({k, data.samples(k, per, seed), {0, 0, seed}});
    return out;
}

inline MetricReport evaluate(const std::vector<SampleSet>& model, const SyntheticDataset& reference, const Setup& s) {
    const EvalConfig e = s.cfg.eval();
    return make_report(model, sample_data(reference, e.samples_per_condition, e.data_seed), s.data, s.reward);
}

inline MetricReport evaluate_student(const Denoiser& net, const TimeGrid& grid, const SyntheticDataset& reference,
                                     const Setup& s) {
    const EvalConfig e = s.cfg.eval();
    return evaluate(sample_student(net, grid, s.K(), e.samples_per_condition, e.sample_seed), reference, s);
}

inline MetricReport evaluate_teacher(const Denoiser& net, const Setup& s) {
    const EvalConfig e = s.cfg.eval();
    return evaluate(sample_teacher(net, s.sched, e.teacher_steps, s.K(), e.samples_per_condition, e.sample_seed),
                    s.data, s);
}

// ---------------------------------------------------------------------------
// Task data

/// Preference pairs: consecutive data draws per condition, ordered by reward,
/// kept when the winner lies nearest the condition's first mode center.
inline std::vector<PairRecord> preference_pairs(const SyntheticDataset& data, const RewardModel& rm,
                                                const PreferenceTask& t) {
    std::vector<PairRecord> pairs;
    for (int k = 0; k < data.num_conditions(); ++k) {
        const auto pts = data.samples(k, t.samples_per_condition, t.pair_seed);
        const auto centers = data.condition(k).mode_centers();
        for (std::size_t i = 0; i + 1 < pts.size(); i += 2) {
            const double ra = rm(pts[i], k), rb = rm(pts[i + 1], k);
            if (ra == rb) continue;
            const Vec2 win = ra > rb ? pts[i] : pts[i + 1];
            const Vec2 lose = ra > rb ? pts[i + 1] : pts[i];
            std::size_t best = 0;
            for (std::size_t m = 1; m < centers.size(); ++m)
                if (squared_distance(win, centers[m]) < squared_distance(win, centers[best])) best = m;
            if (best == 0) pairs.push_back({k, win, lose});
        }
    }
    return pairs;
}

/// The dataset with every mixture mean pushed radially outward by `delta`.
inline SyntheticDataset shifted_dataset(const SyntheticDataset& data, double delta) {
    std::vector<ConditionSpec> conds = data.conditions();
    for (auto& c : conds) {
        if (c.kind != GeneratorKind::gaussian_mixture) throw ConfigError("the shift task needs gaussian-mixture conditions");
        for (auto& m : c.means) {
            const double r = m.norm();
            if (r == 0.0) throw ConfigError("the shift task needs mixture means away from the origin");
            m = ((r + delta) / r) * m;
        }
    }
    return SyntheticDataset(std::move(conds));
}

/// Offline shift pairs: target i is a shifted-data draw, reference i a
/// pre-tune student sample of the same condition.
inline std::vector<PairRecord> shift_pairs(const Denoiser& student, const LabeledPoints& targets, const TimeGrid& grid,
                                           std::uint64_t reference_seed) {
    const auto ref = sample_endpoints(student, std::span<const int>(targets.conditions), reference_seed, grid);
    std::vector<PairRecord> pairs;
    for (std::size_t i = 0; i < targets.size(); ++i) pairs.push_back({targets.conditions[i], targets.points[i], ref[i]});
    return pairs;
}

inline LabeledPoints concept_targets(const ConceptTask& t) {
    LabeledPoints out;
    SeededRng rng(t.point_seed);
    for (std::size_t i = 0; i < t.points; ++i) {
        out.points.push_back(t.center + t.spread * rng.normal2());
        out.conditions.push_back(t.condition);
    }
    return out;
}

inline Vec2 centroid(std::span<const Vec2> pts) {
    Vec2 c{};
    for (const Vec2& p : pts) c = c + p;
    return (1.0 / static_cast<double>(pts.size())) * c;
}

inline double fraction_within(std::span<const Vec2> pts, Vec2 center, double radius) {
    std::size_t k = 0;
    for (const Vec2& p : pts)
        if ((p - center).norm() < radius) ++k;
    return static_cast<double>(k) / static_cast<double>(pts.size());
}

// ---------------------------------------------------------------------------
// Calibration

/// Mean over conditions of the per-condition energy distance.
inline double mean_energy_distance(const std::vector<SampleSet>& a, const std::vector<SampleSet>& b) {
    if (a.empty() || a.size() != b.size()) throw ContractError("mean_energy_distance needs matching sample sets");
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) total += energy_distance(a[i], b[i]);
    return total / static_cast<double>(a.size());
}

struct CalibrationModels {
    Denoiser teacher, student, offline, online, shift_pso, shift_naive, concept_tuned;
};

struct Calibration {
    CalibrationModels models;
    nlohmann::json baseline;
};

using Progress = std::function<void(const std::string& stage, double seconds)>;

/// Runs teacher training, distillation, and the three fine-tune tasks, and
/// collects every calibrated quantity.
inline Calibration run_calibration(const Setup& s, const Progress& progress = {}) {
    using clock = std::chrono::steady_clock;
    auto t0 = clock::now();
    auto lap = [&](const std::string& stage) {
        const auto now = clock::now();
        if (progress) progress(stage, std::chrono::duration<double>(now - t0).count());
        t0 = now;
    };
    const EvalConfig ev = s.cfg.eval();
    const TimeGrid g1 = s.cfg.grid(s.sched, 1);

    auto teacher = train_teacher(s.data, s.sched, s.cfg.teacher(s.arch)).net;
    lap("teacher");
    auto student = distill_student(teacher, s.data, s.sched, s.grid, s.cfg.distill()).net;
    lap("distill");

    const auto teacher_sets =
        sample_teacher(teacher, s.sched, ev.teacher_steps, s.K(), ev.samples_per_condition, ev.sample_seed);
    const auto student_sets = sample_student(student, s.grid, s.K(), ev.samples_per_condition, ev.sample_seed);
    const MetricReport teacher_rep = evaluate(teacher_sets, s.data, s);
    const MetricReport student_rep = evaluate(student_sets, s.data, s);
    const double student_vs_teacher = mean_energy_distance(student_sets, teacher_sets);
    const MetricReport student1_rep = evaluate_student(student, g1, s.data, s);
    lap("base-eval");

    const PreferenceTask pref = s.cfg.preference();
    const auto pairs = preference_pairs(s.data, s.reward, pref);
    auto offline = finetune_offline(student, pairs, s.grid, pref.offline).net;
    lap("preference-offline");
    std::vector<int> conds(static_cast<std::size_t>(s.K()));
    for (int k = 0; k < s.K(); ++k) conds[static_cast<std::size_t>(k)] = k;
    auto online = finetune_online(student, conds, s.reward, s.grid, pref.online).net;
    lap("preference-online");
    const MetricReport off_rep = evaluate_student(offline, s.grid, s.data, s);
    const MetricReport on_rep = evaluate_student(online, s.grid, s.data, s);
    const MetricReport off1_rep = evaluate_student(offline, g1, s.data, s);
    const MetricReport on1_rep = evaluate_student(online, g1, s.data, s);

    const ShiftTask shift = s.cfg.shift();
    const SyntheticDataset shifted = shifted_dataset(s.data, shift.radius_delta);
    const LabeledPoints shift_targets = shifted.generate(shift.targets_per_condition, shift.target_seed);
    const auto spairs = shift_pairs(student, shift_targets, s.grid, shift.reference_seed);
    auto shift_pso = finetune_offline(student, spairs, s.grid, shift.offline).net;
    auto shift_naive = naive_finetune(student, shift_targets, s.sched, shift.naive).net;
    lap("shift");
    const double shift_pre = evaluate_student(student, s.grid, shifted, s).energy_distance;
    const double shift_pso_ed = evaluate_student(shift_pso, s.grid, shifted, s).energy_distance;
    const double shift_naive_ed = evaluate_student(shift_naive, s.grid, shifted, s).energy_distance;

    const ConceptTask ct = s.cfg.concept_task();
    const LabeledPoints ctargets = concept_targets(ct);
    const Vec2 center = centroid(ctargets.points);
    auto concept_tuned = finetune_full(student, ctargets, s.grid, ct.full).net;
    lap("concept");
    auto concept_fraction = [&](const Denoiser& net) {
        const std::vector<int> cc(ev.samples_per_condition, ct.condition);
        const auto pts = sample_endpoints(net, std::span<const int>(cc), ev.sample_seed, s.grid);
        return fraction_within(pts, center, ct.radius);
    };
    const double concept_pre = concept_fraction(student);
    const double concept_post = concept_fraction(concept_tuned);

    // Full fine-tune towards the student's own samples should leave it in place.
    const SelfTask st = s.cfg.self_task();
    const auto self_sets = sample_student(student, s.grid, s.K(), ev.samples_per_condition, st.target_seed);
    LabeledPoints self_targets;
    for (const auto& set : self_sets) {
        self_targets.points.insert(self_targets.points.end(), set.points.begin(), set.points.end());
        self_targets.conditions.insert(self_targets.conditions.end(), set.points.size(), set.condition);
    }
    const auto self_run = finetune_full(student, self_targets, s.grid, st.full);
    lap("self-target");
    double self_margin = 0.0;
    for (const auto& m : self_run.metrics) self_margin += std::abs(m.mean_margin);
    self_margin /= static_cast<double>(std::max<std::size_t>(self_run.metrics.size(), 1));
    const double self_ed = mean_energy_distance(
        sample_student(self_run.net, s.grid, s.K(), ev.samples_per_condition, ev.sample_seed), student_sets);

    const std::string hash = fmt_hex64(s.cfg.hash());
    nlohmann::json entries = nlohmann::json::object();
    auto add = [&](const std::string& name, double value, const std::string& check) {
        entries[name] = {{"value", value}, {"check", check}, {"config_hash", hash}};
    };
    add("teacher.energy_distance", teacher_rep.energy_distance, "< 0.05");
    add("student.energy_distance", student_rep.energy_distance, "< 0.15");
    add("student.energy_distance_1step", student1_rep.energy_distance, "info");
    add("student.energy_distance_to_teacher", student_vs_teacher, "< 2 * teacher.energy_distance");
    add("preference.pre_reward", student_rep.reward_mean, "info");
    add("preference.offline_reward", off_rep.reward_mean, "> preference.pre_reward");
    add("preference.online_reward", on_rep.reward_mean, ">= preference.offline_reward");
    add("preference.pre_reward_1step", student1_rep.reward_mean, "info");
    add("preference.offline_reward_1step", off1_rep.reward_mean, "info");
    add("preference.online_reward_1step", on1_rep.reward_mean, "> preference.pre_reward_1step");
    add("preference.pairs", static_cast<double>(pairs.size()), "info");
    add("shift.pre_energy_distance", shift_pre, "info");
    add("shift.pso_energy_distance", shift_pso_ed, "< shift.naive_energy_distance");
    add("shift.naive_energy_distance", shift_naive_ed, "> shift.pre_energy_distance");
    add("concept.pre_fraction", concept_pre, "info");
    add("concept.post_fraction", concept_post, ">= 0.5");
    add("self.mean_abs_margin", self_margin, "info");
    add("self.energy_distance_to_pre", self_ed, "< 0.05");
    add("ci.teacher_energy_distance_max", 1.25 * 0.05, "teacher.energy_distance slack");
    add("ci.student_energy_distance_max", 1.25 * 0.15, "student.energy_distance slack");

    Calibration out{{std::move(teacher), std::move(student), std::move(offline), std::move(online), std::move(shift_pso),
                     std::move(shift_naive), std::move(concept_tuned)},
                    {{"format", "pso-baseline 1"}, {"config_hash", hash}, {"entries", entries}}};
    return out;
}

} // namespace pso
