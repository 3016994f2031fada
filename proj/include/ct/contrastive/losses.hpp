#pragma once

#include "ct/model/params.hpp"

namespace ct::contrastive {

inline constexpr double kDefaultTemperature = 0.05;

template <typename Real>
struct LossGrad {
    model::Matrix<Real> anchor, positive, negative;  // d(loss)/d(raw rows); negative empty for plain MNR
};

// Multiple-negatives ranking loss over cosine similarities, averaged over i:
//   l_i = -log( exp(cos(r_i, p_i)/tau) / sum_j exp(cos(r_i, p_j)/tau) )
// Throws ZeroVector for a zero row, ShapeMismatch for inconsistent shapes.
template <typename Real>
double mnr_loss(const model::Matrix<Real>& anchors, const model::Matrix<Real>& positives, double tau,
                LossGrad<Real>* grad = nullptr);

// Same with every hard negative n_j added to each denominator:
//   l_i = -log( exp(cos(r_i, p_i)/tau) / sum_j [exp(cos(r_i, p_j)/tau) + exp(cos(r_i, n_j)/tau)] )
template <typename Real>
double mnr_hard_loss(const model::Matrix<Real>& anchors, const model::Matrix<Real>& positives,
                     const model::Matrix<Real>& negatives, double tau, LossGrad<Real>* grad = nullptr);

}  // namespace ct::contrastive
