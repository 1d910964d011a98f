#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pso/error.hpp"
#include "pso/tensor.hpp"

namespace pso {

enum class RewardKind {
    mode_distance, // r = -||x - m_c||^2
    halfplane,     // r = <x, d_c> - offset_c
    ring_radius,   // r = -(||x - m_c|| - radius_c)^2
};

inline std::string to_string(RewardKind k) {
    switch (k) {
    case RewardKind::mode_distance: return "mode-distance";
    case RewardKind::halfplane: return "halfplane";
    case RewardKind::ring_radius: return "ring-radius";
    }
    return "?";
}

inline RewardKind reward_kind_from_string(const std::string& s) {
    if (s == "mode-distance") return RewardKind::mode_distance;
    if (s == "halfplane") return RewardKind::halfplane;
    if (s == "ring-radius") return RewardKind::ring_radius;
    throw ConfigError("unknown reward kind '" + s + "'");
}

/// Analytic per-condition preference score. `points[c]` is the preferred mode
/// m_c (mode-distance, ring-radius) or the half-plane normal d_c (halfplane);
/// `scalars[c]` is the ring radius or the half-plane offset and is unused by
/// mode-distance.
class RewardModel {
public:
    RewardModel(RewardKind kind, std::vector<Vec2> points, std::vector<double> scalars = {})
        : kind_(kind), points_(std::move(points)), scalars_(std::move(scalars)) {
        if (points_.empty()) throw ConfigError("reward needs per-condition parameters");
        if (scalars_.empty()) scalars_.assign(points_.size(), 0.0);
        if (scalars_.size() != points_.size()) throw ConfigError("reward parameter counts disagree");
    }

    static RewardModel constant(int num_conditions) {
        RewardModel r(RewardKind::halfplane, std::vector<Vec2>(static_cast<std::size_t>(num_conditions)));
        return r;
    }

    RewardKind kind() const noexcept { return kind_; }
    int num_conditions() const noexcept { return static_cast<int>(points_.size()); }
    Vec2 point(int c) const { return points_.at(index(c)); }
    double scalar(int c) const { return scalars_.at(index(c)); }
    const std::vector<Vec2>& points() const noexcept { return points_; }
    const std::vector<double>& scalars() const noexcept { return scalars_; }

    double operator()(Vec2 x, int c) const {
        const std::size_t i = index(c);
        switch (kind_) {
        case RewardKind::mode_distance: return -squared_distance(x, points_[i]);
        case RewardKind::halfplane: return x.x * points_[i].x + x.y * points_[i].y - scalars_[i];
        case RewardKind::ring_radius: {
            const double d = (x - points_[i]).norm() - scalars_[i];
            return -d * d;
        }
        }
        return 0.0;
    }

private:
    std::size_t index(int c) const {
        if (c < 0 || c >= num_conditions())
            throw InputDomainError("reward has no parameters for condition " + std::to_string(c));
        return static_cast<std::size_t>(c);
    }

    RewardKind kind_;
    std::vector<Vec2> points_;
    std::vector<double> scalars_;
};

} // namespace pso
