#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "pso/error.hpp"
#include "pso/rng.hpp"
#include "pso/tensor.hpp"

namespace pso {

enum class GeneratorKind { gaussian_mixture, ring, two_moons };

inline std::string to_string(GeneratorKind k) {
    switch (k) {
    case GeneratorKind::gaussian_mixture: return "gaussian-mixture";
    case GeneratorKind::ring: return "ring";
    case GeneratorKind::two_moons: return "two-moons";
    }
    return "?";
}

inline GeneratorKind generator_kind_from_string(const std::string& s) {
    if (s == "gaussian-mixture") return GeneratorKind::gaussian_mixture;
    if (s == "ring") return GeneratorKind::ring;
    if (s == "two-moons") return GeneratorKind::two_moons;
    throw ConfigError("unknown generator kind '" + s + "'");
}

/// Analytic 2-D density for one condition.
///
/// gaussian-mixture: isotropic components (means, stds, weights).
/// ring: uniform angle around `center` at `radius`, Gaussian radial noise `noise`.
/// two-moons: the classic interleaved half circles, scaled by `radius`,
///            translated by `center`, isotropic noise `noise`.
struct ConditionSpec {
    GeneratorKind kind = GeneratorKind::gaussian_mixture;
    std::vector<Vec2> means;
    std::vector<double> stds;
    std::vector<double> weights;
    Vec2 center{};
    double radius = 1.0;
    double noise = 0.1;

    void validate() const {
        if (kind == GeneratorKind::gaussian_mixture) {
            if (means.empty() || means.size() != stds.size() || means.size() != weights.size())
                throw ConfigError("gaussian-mixture needs equally many means, stds and weights");
            double total = 0.0;
            for (double w : weights) {
                if (!(w >= 0.0)) throw ConfigError("mixture weights must be non-negative");
                total += w;
            }
            if (!(total > 0.0)) throw ConfigError("mixture weights must not all be zero");
            for (double s : stds)
                if (!(s >= 0.0)) throw ConfigError("mixture stds must be non-negative");
        } else {
            if (!(radius > 0.0) || !(noise >= 0.0)) throw ConfigError("ring/two-moons need radius > 0, noise >= 0");
        }
    }

    /// Points used to assign samples to modes.
    std::vector<Vec2> mode_centers() const {
        switch (kind) {
        case GeneratorKind::gaussian_mixture: return means;
        case GeneratorKind::ring: return {center};
        case GeneratorKind::two_moons: {
            const double k = 2.0 / std::numbers::pi; // centroid height of a unit half circle
            return {center + radius * Vec2{0.0, k}, center + radius * Vec2{1.0, 0.5 - k}};
        }
        }
        return {};
    }

    Vec2 sample(SeededRng& rng) const {
        switch (kind) {
        case GeneratorKind::gaussian_mixture: {
            double total = 0.0;
            for (double w : weights) total += w;
            const double u = rng.uniform() * total;
            std::size_t i = 0;
            double acc = weights[0];
            while (u >= acc && i + 1 < weights.size()) acc += weights[++i];
            return means[i] + stds[i] * rng.normal2();
        }
        case GeneratorKind::ring: {
            const double a = 2.0 * std::numbers::pi * rng.uniform();
            const double r = radius + noise * rng.normal();
            return center + Vec2{r * std::cos(a), r * std::sin(a)};
        }
        case GeneratorKind::two_moons: {
            const double a = std::numbers::pi * rng.uniform();
            const bool upper = rng.uniform() < 0.5;
            const Vec2 p = upper ? Vec2{std::cos(a), std::sin(a)} : Vec2{1.0 - std::cos(a), 0.5 - std::sin(a)};
            return center + radius * p + noise * rng.normal2();
        }
        }
        return {};
    }

    /// Mixture density; only defined for gaussian-mixture.
    double density(Vec2 x) const {
        if (kind != GeneratorKind::gaussian_mixture) throw ContractError("density is only available for mixtures");
        double total = 0.0;
        for (double w : weights) total += w;
        double p = 0.0;
        for (std::size_t i = 0; i < means.size(); ++i) {
            const double v = stds[i] * stds[i];
            p += weights[i] / total * std::exp(-squared_distance(x, means[i]) / (2.0 * v)) / (2.0 * std::numbers::pi * v);
        }
        return p;
    }
};

/// Points paired with their condition ids.
struct LabeledPoints {
    std::vector<Vec2> points;
    std::vector<int> conditions;

    std::size_t size() const noexcept { return points.size(); }
};

/// Per-condition analytic generators standing in for p_data(x0 | c).
class SyntheticDataset {
public:
    SyntheticDataset() = default;
    explicit SyntheticDataset(std::vector<ConditionSpec> conditions) : conditions_(std::move(conditions)) {
        if (conditions_.empty()) throw ConfigError("dataset needs at least one condition");
        for (const auto& c : conditions_) c.validate();
    }

    /// K conditions, each a two-mode mixture whose means sit at opposite
    /// points of a circle of the given radius; condition c uses the angles
    /// 2*pi*c/(2K) and that plus pi, so all 2K means are distinct. The first
    /// listed mean is the condition's "preferred" mode for the reward tasks.
    static SyntheticDataset circle_mixture(int K = 4, double radius = 4.0, double std = 0.3) {
        std::vector<ConditionSpec> conds;
        for (int c = 0; c < K; ++c) {
            const double a = std::numbers::pi * c / K;
            ConditionSpec s;
            s.kind = GeneratorKind::gaussian_mixture;
            s.means = {radius * Vec2{std::cos(a), std::sin(a)}, radius * Vec2{-std::cos(a), -std::sin(a)}};
            s.stds = {std, std};
            s.weights = {0.5, 0.5};
            conds.push_back(std::move(s));
        }
        return SyntheticDataset(std::move(conds));
    }

    int num_conditions() const noexcept { return static_cast<int>(conditions_.size()); }
    const ConditionSpec& condition(int c) const {
        check_condition(c);
        return conditions_[static_cast<std::size_t>(c)];
    }
    const std::vector<ConditionSpec>& conditions() const noexcept { return conditions_; }

    void check_condition(int c) const {
        if (c < 0 || c >= num_conditions())
            throw InputDomainError("condition id " + std::to_string(c) + " outside [0, " +
                                   std::to_string(num_conditions()) + ")");
    }

    /// Sample i of condition c is drawn from its own sub-stream, so the first
    /// n samples do not depend on how many are requested.
    Vec2 sample(int c, std::uint64_t seed, std::uint64_t i) const {
        SeededRng rng = SeededRng::substream(seed, (static_cast<std::uint64_t>(c) << 40) + i);
        return condition(c).sample(rng);
    }

    std::vector<Vec2> samples(int c, std::size_t n, std::uint64_t seed) const {
        std::vector<Vec2> out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = sample(c, seed, i);
        return out;
    }

    /// n_per_condition points for every condition, grouped by condition.
    LabeledPoints generate(std::size_t n_per_condition, std::uint64_t seed) const {
        LabeledPoints out;
        for (int c = 0; c < num_conditions(); ++c) {
            auto pts = samples(c, n_per_condition, seed);
            out.points.insert(out.points.end(), pts.begin(), pts.end());
            out.conditions.insert(out.conditions.end(), n_per_condition, c);
        }
        return out;
    }

private:
    std::vector<ConditionSpec> conditions_;
};

} // namespace pso
