#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pso/error.hpp"
#include "pso/schedule.hpp"

namespace pso {

/// The descending few-step grid t_N > ... > t_1 > t_0 = 0 of a distilled
/// sampler. Index n = N is the pure-noise end; the transition n = 1 -> 0 is
/// the deterministic clean prediction.
class TimeGrid {
public:
    /// t_n = round(n (T-1) / N), so t_N = T-1 and t_0 = 0.
    static TimeGrid even(int N, const NoiseSchedule& sched) {
        if (N < 1) throw InputDomainError("grid needs N >= 1");
        if (N > sched.T() - 1 && sched.T() > 1) throw InputDomainError("grid N exceeds T - 1");
        std::vector<int> t(static_cast<std::size_t>(N) + 1);
        for (int n = 0; n <= N; ++n)
            t[static_cast<std::size_t>(n)] =
                static_cast<int>(std::lround(static_cast<double>(n) * (sched.T() - 1) / N));
        return TimeGrid(std::move(t), sched);
    }

    /// Explicit timesteps indexed by n (t[0] must be 0, strictly increasing in n).
    TimeGrid(std::vector<int> timesteps, const NoiseSchedule& sched) : t_(std::move(timesteps)) {
        if (t_.size() < 2) throw InputDomainError("grid needs at least t_1 and t_0");
        if (t_[0] != 0) throw InputDomainError("grid must end at t_0 = 0");
        for (std::size_t n = 1; n < t_.size(); ++n)
            if (t_[n] <= t_[n - 1]) throw InputDomainError("grid timesteps must strictly decrease towards t_0");
        ab_.resize(t_.size());
        for (std::size_t n = 0; n < t_.size(); ++n) ab_[n] = sched.alpha_bar(t_[n]);
    }

    int N() const noexcept { return static_cast<int>(t_.size()) - 1; }
    int t(int n) const { return t_[index(n)]; }
    const std::vector<int>& timesteps() const noexcept { return t_; }
    double alpha_bar(int n) const { return ab_[index(n)]; }

    /// Policy variance of transition n -> n-1: 1 - alpha_bar(t_{n-1}), n >= 2.
    double sigma2(int n) const {
        if (n < 2 || n > N()) throw ContractError("sigma2 is defined for 2 <= n <= N, got n = " + std::to_string(n));
        return 1.0 - ab_[static_cast<std::size_t>(n - 1)];
    }

    static bool deterministic(int n) { return n == 1; }

    std::string describe() const {
        std::string s;
        for (int n = N(); n >= 0; --n) s += std::to_string(t(n)) + (n ? "," : "");
        return s;
    }

    friend bool operator==(const TimeGrid& a, const TimeGrid& b) { return a.t_ == b.t_; }

private:
    std::size_t index(int n) const {
        if (n < 0 || n > N()) throw InputDomainError("grid index " + std::to_string(n) + " outside [0, N]");
        return static_cast<std::size_t>(n);
    }

    std::vector<int> t_;
    std::vector<double> ab_;
};

/// Noise levels of an Euler-ancestral sampler, sigma_N > ... > sigma_1 > sigma_0 = 0,
/// with the ancestral split of every step into a deterministic ("down") and a
/// stochastic ("up") part satisfying up^2 + down^2 = sigma_{n-1}^2:
///   up_n   = min(sigma_{n-1}, sqrt((sigma_n^2 - sigma_{n-1}^2) sigma_{n-1}^2 / sigma_n^2))
///   down_n = sqrt(sigma_{n-1}^2 - up_n^2)
class EulerGrid {
public:
    /// sigma_n = sqrt((1 - alpha_bar) / alpha_bar) at each t_n, sigma_0 = 0.
    static EulerGrid from_time_grid(const TimeGrid& grid) {
        std::vector<double> sigma(static_cast<std::size_t>(grid.N()) + 1, 0.0);
        for (int n = 1; n <= grid.N(); ++n) {
            const double ab = grid.alpha_bar(n);
            sigma[static_cast<std::size_t>(n)] = std::sqrt((1.0 - ab) / ab);
        }
        return EulerGrid(std::move(sigma), grid.timesteps());
    }

    /// sigma[n] and timesteps[n] indexed by n = 0..N.
    EulerGrid(std::vector<double> sigma, std::vector<int> timesteps)
        : sigma_(std::move(sigma)), t_(std::move(timesteps)) {
        if (sigma_.size() < 2 || sigma_.size() != t_.size()) throw ContractError("euler grid shape mismatch");
        for (std::size_t n = 1; n < sigma_.size(); ++n)
            if (!(sigma_[n - 1] < sigma_[n]))
                throw ContractError("euler noise levels must strictly descend towards n = 0");
        if (!(sigma_[0] >= 0.0)) throw ContractError("euler noise levels must be non-negative");
        up_.assign(sigma_.size(), 0.0);
        down_.assign(sigma_.size(), 0.0);
        for (std::size_t n = 1; n < sigma_.size(); ++n) {
            const double s = sigma_[n], sp = sigma_[n - 1];
            double up = std::sqrt((s * s - sp * sp) * sp * sp / (s * s));
            if (up > sp) up = sp;
            up_[n] = up;
            down_[n] = std::sqrt(sp * sp - up * up);
        }
    }

    int N() const noexcept { return static_cast<int>(sigma_.size()) - 1; }
    double sigma(int n) const { return sigma_.at(static_cast<std::size_t>(n)); }
    double up(int n) const { return up_.at(static_cast<std::size_t>(n)); }
    double down(int n) const { return down_.at(static_cast<std::size_t>(n)); }
    int t(int n) const { return t_.at(static_cast<std::size_t>(n)); }

private:
    std::vector<double> sigma_;
    std::vector<int> t_;
    std::vector<double> up_;
    std::vector<double> down_;
};

} // namespace pso
