#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pso/error.hpp"
#include "pso/tensor.hpp"

namespace pso {

/// Discrete variance-preserving noise schedule over T training timesteps.
/// alpha_bar(t) is the cumulative product of (1 - beta_s) for s <= t.
class NoiseSchedule {
public:
    /// Linear beta sequence from beta_start to beta_end (inclusive).
    static NoiseSchedule linear(int T = 1000, double beta_start = 1e-4, double beta_end = 0.02) {
        if (T < 1) throw ContractError("schedule needs T >= 1");
        std::vector<double> betas(static_cast<std::size_t>(T));
        for (int t = 0; t < T; ++t) {
            const double frac = T == 1 ? 0.0 : static_cast<double>(t) / (T - 1);
            betas[static_cast<std::size_t>(t)] = beta_start + (beta_end - beta_start) * frac;
        }
        NoiseSchedule s(std::move(betas));
        s.beta_start_ = beta_start;
        s.beta_end_ = beta_end;
        return s;
    }

    /// Arbitrary betas in [0, 1].
    explicit NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
        if (betas_.empty()) throw ContractError("schedule needs at least one beta");
        alpha_bar_.resize(betas_.size());
        double prod = 1.0;
        for (std::size_t t = 0; t < betas_.size(); ++t) {
            if (!(betas_[t] >= 0.0 && betas_[t] <= 1.0))
                throw InputDomainError("beta_" + std::to_string(t) + " outside [0, 1]");
            prod *= 1.0 - betas_[t];
            alpha_bar_[t] = prod;
        }
        if (!betas_.empty()) {
            beta_start_ = betas_.front();
            beta_end_ = betas_.back();
        }
    }

    int T() const noexcept { return static_cast<int>(betas_.size()); }
    double beta_start() const noexcept { return beta_start_; }
    double beta_end() const noexcept { return beta_end_; }

    double beta(int t) const { return betas_[index(t)]; }
    double alpha_bar(int t) const { return alpha_bar_[index(t)]; }
    double sqrt_alpha_bar(int t) const { return std::sqrt(alpha_bar(t)); }
    double sqrt_one_minus_alpha_bar(int t) const { return std::sqrt(1.0 - alpha_bar(t)); }

    void check_timestep(int t) const {
        if (t < 0 || t >= T())
            throw InputDomainError("timestep " + std::to_string(t) + " outside [0, " +
                                   std::to_string(T()) + ")");
    }

private:
    std::size_t index(int t) const {
        check_timestep(t);
        return static_cast<std::size_t>(t);
    }

    std::vector<double> betas_;
    std::vector<double> alpha_bar_;
    double beta_start_ = 0.0;
    double beta_end_ = 0.0;
};

/// Clean point implied by an epsilon prediction: (x - sqrt(1-ab) eps) / sqrt(ab).
inline Vec2 x0_from_eps(Vec2 x, double alpha_bar, Vec2 eps) {
    if (!(alpha_bar > 0.0)) throw NumericError("x0_from_eps is singular at alpha_bar = 0", alpha_bar);
    const double a = std::sqrt(alpha_bar);
    const double s = std::sqrt(1.0 - alpha_bar);
    return {(x.x - s * eps.x) / a, (x.y - s * eps.y) / a};
}

inline Vec2 x0_from_eps(Vec2 x, int t, Vec2 eps, const NoiseSchedule& sched) {
    return x0_from_eps(x, sched.alpha_bar(t), eps);
}

/// Inverse of x0_from_eps: sqrt(ab) x0 + sqrt(1-ab) eps.
inline Vec2 forward_reparam(Vec2 x0, double alpha_bar, Vec2 eps) {
    const double a = std::sqrt(alpha_bar);
    const double s = std::sqrt(1.0 - alpha_bar);
    return {a * x0.x + s * eps.x, a * x0.y + s * eps.y};
}

} // namespace pso
