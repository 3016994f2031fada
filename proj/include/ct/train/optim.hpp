#pragma once

#include <cstdint>

#include "ct/model/params.hpp"

namespace ct::train {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// AdamW with bias correction and decoupled weight decay:
//   theta <- theta * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps)
template <typename Real>
class AdamW {
public:
    AdamW(const model::ParamSet<Real>& params, AdamWConfig cfg = {})
        : cfg_(cfg), m_(params.zeros_like()), v_(params.zeros_like()) {}

    // Throws ShapeMismatch if params/grads do not share the moment layout.
    void step(model::ParamSet<Real>& params, const model::ParamSet<Real>& grads, double lr);

    std::uint64_t steps() const { return step_; }
    const AdamWConfig& config() const { return cfg_; }
    const model::ParamSet<Real>& first_moment() const { return m_; }
    const model::ParamSet<Real>& second_moment() const { return v_; }

private:
    AdamWConfig cfg_;
    model::ParamSet<Real> m_;
    model::ParamSet<Real> v_;
    std::uint64_t step_ = 0;
};

// Linear warmup from 0 to peak over warmup_frac * total_steps, then linear decay to 0.
double lr_schedule(std::int64_t step, std::int64_t total_steps, double peak, double warmup_frac);

}  // namespace ct::train
