#include "ct/train/optim.hpp"

#include <algorithm>
#include <cmath>

#include "ct/common/errors.hpp"

namespace ct::train {

template <typename Real>
void AdamW<Real>::step(model::ParamSet<Real>& params, const model::ParamSet<Real>& grads, double lr) {
    if (!params.same_layout(m_) || !grads.same_layout(m_)) throw ShapeMismatch("optimizer state layout differs");
    if (lr < 0) throw InvalidConfig("learning rate must be non-negative");
    ++step_;
    const double t = static_cast<double>(step_);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
    const Real b1 = static_cast<Real>(cfg_.beta1), b2 = static_cast<Real>(cfg_.beta2);
    const Real decay = static_cast<Real>(1.0 - lr * cfg_.weight_decay);
    const Real step_size = static_cast<Real>(lr / bc1);
    const Real inv_sqrt_bc2 = static_cast<Real>(1.0 / std::sqrt(bc2));
    const Real eps = static_cast<Real>(cfg_.eps);

    auto& pt = params.tensors();
    const auto& gt = grads.tensors();
    auto& mt = m_.tensors();
    auto& vt = v_.tensors();
    for (std::size_t i = 0; i < pt.size(); ++i) {
        auto& p = pt[i].value;
        const auto& g = gt[i].value;
        auto& m = mt[i].value;
        auto& v = vt[i].value;
        m = b1 * m + (Real(1) - b1) * g;
        v = b2 * v + (Real(1) - b2) * g.cwiseProduct(g);
        p *= decay;
        p.array() -= step_size * m.array() / (v.array().sqrt() * inv_sqrt_bc2 + eps);
    }
    params.bump_version();
}

double lr_schedule(std::int64_t step, std::int64_t total_steps, double peak, double warmup_frac) {
    if (total_steps <= 0) return 0.0;
    step = std::clamp<std::int64_t>(step, 0, total_steps);
    const double warm = warmup_frac * static_cast<double>(total_steps);
    const double s = static_cast<double>(step);
    if (s < warm) return peak * s / warm;
    const double rest = static_cast<double>(total_steps) - warm;
    if (rest <= 0.0) return peak;
    return peak * (static_cast<double>(total_steps) - s) / rest;
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace ct::train
