#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "pso/dataset.hpp"
#include "pso/error.hpp"
#include "pso/reward.hpp"
#include "pso/tensor.hpp"
#include "pso/text.hpp"

namespace pso {

struct SampleProvenance {
    std::uint64_t model_hash = 0;
    int steps = 0;
    std::uint64_t seed = 0;
};

struct SampleSet {
    int condition = 0;
    std::vector<Vec2> points;
    SampleProvenance provenance;
};

/// Mean pairwise distance between two point sets, accumulated row by row in
/// index order.
inline double mean_pairwise_distance(std::span<const Vec2> a, std::span<const Vec2> b) {
    double total = 0.0;
    for (const Vec2& p : a) {
        double row = 0.0;
        for (const Vec2& q : b) {
            const double dx = p.x - q.x, dy = p.y - q.y;
            row += std::sqrt(dx * dx + dy * dy);
        }
        total += row;
    }
    return total / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

/// Energy distance 2 E|X-Y| - E|X-X'| - E|Y-Y'| with all-pairs means
/// (V-statistic, so identical sets give exactly zero).
inline double energy_distance(std::span<const Vec2> a, std::span<const Vec2> b) {
    if (a.empty() || b.empty()) throw ContractError("energy_distance needs non-empty sample sets");
    const double xy = mean_pairwise_distance(a, b);
    const double yx = mean_pairwise_distance(b, a);
    const double xx = mean_pairwise_distance(a, a);
    const double yy = mean_pairwise_distance(b, b);
    // Written so swapping a and b only commutes additions: exactly symmetric.
    const double e = (xy + yx) - (xx + yy);
    return e < 0.0 ? 0.0 : e;
}

inline double energy_distance(const SampleSet& a, const SampleSet& b) { return energy_distance(a.points, b.points); }

struct RewardStats {
    double mean = 0.0;
    double std = 0.0;
};

/// Mean and population standard deviation of r(x, c) over the set.
inline RewardStats reward_stats(std::span<const Vec2> pts, std::span<const int> cond, const RewardModel& rm) {
    if (pts.empty()) throw ContractError("reward_stats needs a non-empty sample set");
    if (cond.size() != pts.size()) throw ContractError("reward_stats condition count mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) sum += rm(pts[i], cond[i]);
    const double mean = sum / static_cast<double>(pts.size());
    double ss = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const double d = rm(pts[i], cond[i]) - mean;
        ss += d * d;
    }
    return {mean, std::sqrt(ss / static_cast<double>(pts.size()))};
}

inline RewardStats reward_stats(const SampleSet& s, const RewardModel& rm) {
    const std::vector<int> cond(s.points.size(), s.condition);
    return reward_stats(s.points, cond, rm);
}

/// Nearest-mode-center assignment, normalised to fractions.
inline std::vector<double> mode_occupancy(const SampleSet& s, const SyntheticDataset& data) {
    const auto centers = data.condition(s.condition).mode_centers();
    std::vector<double> hist(centers.size(), 0.0);
    if (s.points.empty() || centers.empty()) return hist;
    for (const Vec2& p : s.points) {
        std::size_t best = 0;
        double best_d = squared_distance(p, centers[0]);
        for (std::size_t m = 1; m < centers.size(); ++m) {
            const double d = squared_distance(p, centers[m]);
            if (d < best_d) {
                best_d = d;
                best = m;
            }
        }
        hist[best] += 1.0;
    }
    for (double& h : hist) h /= static_cast<double>(s.points.size());
    return hist;
}

/// Summary of one evaluation. runtime_seconds is informational and is not
/// part of either serialised form, so report files stay byte-reproducible.
struct MetricReport {
    double energy_distance = 0.0;
    double reward_mean = 0.0;
    double reward_std = 0.0;
    std::vector<std::vector<double>> occupancy; // [condition][mode]
    std::size_t sample_count = 0;
    double runtime_seconds = 0.0;

    std::string to_text() const {
        std::ostringstream os;
        os << "energy_distance=" << fmt_double(energy_distance) << '\n';
        os << "reward_mean=" << fmt_double(reward_mean) << '\n';
        os << "reward_std=" << fmt_double(reward_std) << '\n';
        os << "sample_count=" << sample_count << '\n';
        for (std::size_t c = 0; c < occupancy.size(); ++c) {
            os << "occupancy.c" << c << '=';
            for (std::size_t m = 0; m < occupancy[c].size(); ++m) os << (m ? "," : "") << fmt_double(occupancy[c][m]);
            os << '\n';
        }
        return os.str();
    }

    nlohmann::json to_json() const {
        return {{"energy_distance", energy_distance},
                {"reward_mean", reward_mean},
                {"reward_std", reward_std},
                {"sample_count", sample_count},
                {"occupancy", occupancy}};
    }

    static MetricReport from_json(const nlohmann::json& j) {
        MetricReport r;
        try {
            r.energy_distance = j.at("energy_distance").get<double>();
            r.reward_mean = j.at("reward_mean").get<double>();
            r.reward_std = j.at("reward_std").get<double>();
            r.sample_count = j.at("sample_count").get<std::size_t>();
            r.occupancy = j.at("occupancy").get<std::vector<std::vector<double>>>();
        } catch (const nlohmann::json::exception& e) {
            throw LoadError(std::string("malformed metric report: ") + e.what());
        }
        return r;
    }
};

/// Builds a report from per-condition model samples and per-condition
/// reference samples. The energy distance is the mean of the per-condition
/// distances; rewards pool every sample.
inline MetricReport make_report(const std::vector<SampleSet>& model, const std::vector<SampleSet>& reference,
                                const SyntheticDataset& data, const RewardModel& rm) {
    if (model.empty() || model.size() != reference.size()) throw ContractError("make_report needs matching sample sets");
    MetricReport r;
    std::vector<Vec2> pts;
    std::vector<int> cond;
    double ed = 0.0;
    for (std::size_t i = 0; i < model.size(); ++i) {
        ed += energy_distance(model[i], reference[i]);
        pts.insert(pts.end(), model[i].points.begin(), model[i].points.end());
        cond.insert(cond.end(), model[i].points.size(), model[i].condition);
        r.occupancy.push_back(mode_occupancy(model[i], data));
    }
    r.energy_distance = ed / static_cast<double>(model.size());
    const auto rs = reward_stats(pts, cond, rm);
    r.reward_mean = rs.mean;
    r.reward_std = rs.std;
    r.sample_count = pts.size();
    return r;
}

struct CompareThresholds {
    double min_reward_delta = 0.0;
    double max_energy_distance_delta = std::numeric_limits<double>::infinity();
};

struct MetricDelta {
    std::string name;
    double before = 0.0;
    double after = 0.0;
    double delta = 0.0;
};

struct RunComparison {
    std::vector<MetricDelta> deltas;
    bool reward_improved = false;
    bool energy_distance_improved = false;
    bool passed = false;
    std::vector<std::string> warnings;

    std::string to_text() const {
        std::ostringstream os;
        os << "metric,before,after,delta\n";
        for (const auto& d : deltas)
            os << d.name << ',' << fmt_double(d.before) << ',' << fmt_double(d.after) << ',' << fmt_double(d.delta)
               << '\n';
        os << "reward_improved=" << (reward_improved ? 1 : 0) << '\n';
        os << "energy_distance_improved=" << (energy_distance_improved ? 1 : 0) << '\n';
        os << "passed=" << (passed ? 1 : 0) << '\n';
        for (const auto& w : warnings) os << "warning=" << w << '\n';
        return os.str();
    }

    nlohmann::json to_json() const {
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& d : deltas)
            rows.push_back({{"metric", d.name}, {"before", d.before}, {"after", d.after}, {"delta", d.delta}});
        return {{"deltas", rows},
                {"reward_improved", reward_improved},
                {"energy_distance_improved", energy_distance_improved},
                {"passed", passed},
                {"warnings", warnings}};
    }
};

inline RunComparison compare_runs(const MetricReport& before, const MetricReport& after,
                                  const CompareThresholds& th = {}) {
    RunComparison cmp;
    auto add = [&](const std::string& name, double b, double a) { cmp.deltas.push_back({name, b, a, a - b}); };
    add("energy_distance", before.energy_distance, after.energy_distance);
    add("reward_mean", before.reward_mean, after.reward_mean);
    add("reward_std", before.reward_std, after.reward_std);
    add("sample_count", static_cast<double>(before.sample_count), static_cast<double>(after.sample_count));
    const std::size_t nc = std::min(before.occupancy.size(), after.occupancy.size());
    for (std::size_t c = 0; c < nc; ++c) {
        const std::size_t nm = std::min(before.occupancy[c].size(), after.occupancy[c].size());
        for (std::size_t m = 0; m < nm; ++m)
            add("occupancy.c" + std::to_string(c) + ".m" + std::to_string(m), before.occupancy[c][m],
                after.occupancy[c][m]);
    }
    if (before.sample_count != after.sample_count)
        cmp.warnings.push_back("sample counts differ (" + std::to_string(before.sample_count) + " vs " +
                               std::to_string(after.sample_count) + ")");
    if (before.occupancy.size() != after.occupancy.size()) cmp.warnings.push_back("condition counts differ");
    cmp.reward_improved = after.reward_mean > before.reward_mean;
    cmp.energy_distance_improved = after.energy_distance < before.energy_distance;
    cmp.passed = (after.reward_mean - before.reward_mean) >= th.min_reward_delta &&
                 (after.energy_distance - before.energy_distance) <= th.max_energy_distance_delta;
    return cmp;
}

} // namespace pso
