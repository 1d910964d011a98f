#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "pso/denoiser.hpp"
#include "pso/error.hpp"

namespace pso {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adaptive moment estimation over a flat parameter array.
class Adam {
public:
    explicit Adam(std::size_t num_params, AdamConfig cfg = {})
        : cfg_(cfg), m_(num_params, 0.0), v_(num_params, 0.0) {}

    const AdamConfig& config() const noexcept { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }
    std::int64_t step_count() const noexcept { return step_; }
    const std::vector<double>& first_moment() const noexcept { return m_; }
    const std::vector<double>& second_moment() const noexcept { return v_; }

    void step(std::span<double> params, std::span<const double> grad) {
        if (params.size() != m_.size() || grad.size() != m_.size())
            throw ContractError("optimizer shape mismatch: params " + std::to_string(params.size()) + ", grad " +
                                std::to_string(grad.size()) + ", state " + std::to_string(m_.size()));
        ++step_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
            v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
            const double mhat = m_[i] / c1;
            const double vhat = v_[i] / c2;
            params[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }

    void step(Denoiser& net, const ParamGradient& grad) { step(net.params(), grad.values); }

private:
    AdamConfig cfg_;
    std::vector<double> m_;
    std::vector<double> v_;
    std::int64_t step_ = 0;
};

} // namespace pso
