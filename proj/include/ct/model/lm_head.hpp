#pragma once

#include <span>
#include <vector>

#include "ct/model/config.hpp"
#include "ct/model/encoder.hpp"
#include "ct/model/params.hpp"

namespace ct::model {

template <typename Real>
struct LmHeadTape {
    const ParamSet<Real>* params = nullptr;
    std::uint64_t params_version = 0;
    std::vector<Eigen::Index> rows;
    Eigen::Index hidden_rows = 0;
    Matrix<Real> selected, pre_act, act, normed, ln_xhat;
    RowVector<Real> ln_rstd;
};

// RoBERTa-style masked-LM head on the chosen hidden rows:
// dense -> gelu -> layer norm -> projection onto the (tied) word embeddings + bias.
// Returns logits [rows.size() x vocab].
template <typename Real>
Matrix<Real> lm_head_forward(const ParamSet<Real>& params, const EncoderConfig& cfg, const Matrix<Real>& hidden,
                             std::span<const Eigen::Index> rows, LmHeadTape<Real>& tape);

// Accumulates head gradients (including the tied word embeddings) into grads
// and returns d(loss)/d(hidden) with zeros on unselected rows.
template <typename Real>
Matrix<Real> lm_head_backward(const LmHeadTape<Real>& tape, const Matrix<Real>& d_logits, ParamSet<Real>& grads);

}  // namespace ct::model
