#include "ct/model/lm_head.hpp"

#include "ct/common/errors.hpp"
#include "ops.hpp"

namespace ct::model {

template <typename Real>
Matrix<Real> lm_head_forward(const ParamSet<Real>& params, const EncoderConfig& cfg, const Matrix<Real>& hidden,
                             std::span<const Eigen::Index> rows, LmHeadTape<Real>& tape) {
    tape.params = &params;
    tape.params_version = params.version();
    tape.rows.assign(rows.begin(), rows.end());
    tape.hidden_rows = hidden.rows();
    const auto m = static_cast<Eigen::Index>(rows.size());
    tape.selected.resize(m, hidden.cols());
    for (Eigen::Index i = 0; i < m; ++i) {
        if (rows[static_cast<std::size_t>(i)] < 0 || rows[static_cast<std::size_t>(i)] >= hidden.rows())
            throw ShapeMismatch("selected row outside hidden states");
        tape.selected.row(i) = hidden.row(rows[static_cast<std::size_t>(i)]);
    }
    tape.pre_act = (tape.selected * params[names::lm_dense_weight]).rowwise() + params[names::lm_dense_bias].row(0);
    tape.act = tape.pre_act.unaryExpr([](Real v) { return ops::gelu(v); });
    tape.normed = ops::layer_norm(tape.act, params[names::lm_ln_weight], params[names::lm_ln_bias],
                                  cfg.layer_norm_eps, tape.ln_xhat, tape.ln_rstd);
    Matrix<Real> logits = tape.normed * params[names::word_embeddings].transpose();
    logits.rowwise() += params[names::lm_bias].row(0);
    return logits;
}

template <typename Real>
Matrix<Real> lm_head_backward(const LmHeadTape<Real>& tape, const Matrix<Real>& d_logits, ParamSet<Real>& grads) {
    if (tape.params == nullptr || tape.params->version() != tape.params_version)
        throw StaleTape("parameters changed after the head forward pass");
    const auto& params = *tape.params;
    if (d_logits.rows() != tape.normed.rows()) throw ShapeMismatch("logit gradient rows");
    grads[names::lm_bias].row(0) += d_logits.colwise().sum();
    grads[names::word_embeddings].noalias() += d_logits.transpose() * tape.normed;
    Matrix<Real> dnormed = d_logits * params[names::word_embeddings];
    Matrix<Real> dact = ops::layer_norm_backward(dnormed, tape.ln_xhat, tape.ln_rstd, params[names::lm_ln_weight],
                                                 grads[names::lm_ln_weight], grads[names::lm_ln_bias]);
    Matrix<Real> dpre = dact.cwiseProduct(tape.pre_act.unaryExpr([](Real v) { return ops::gelu_grad(v); }));
    grads[names::lm_dense_weight].noalias() += tape.selected.transpose() * dpre;
    grads[names::lm_dense_bias].row(0) += dpre.colwise().sum();
    Matrix<Real> dsel = dpre * params[names::lm_dense_weight].transpose();
    Matrix<Real> dhidden = Matrix<Real>::Zero(tape.hidden_rows, tape.selected.cols());
    for (std::size_t i = 0; i < tape.rows.size(); ++i) dhidden.row(tape.rows[i]) += dsel.row(static_cast<Eigen::Index>(i));
    return dhidden;
}

template Matrix<float> lm_head_forward<float>(const ParamSet<float>&, const EncoderConfig&, const Matrix<float>&,
                                              std::span<const Eigen::Index>, LmHeadTape<float>&);
template Matrix<double> lm_head_forward<double>(const ParamSet<double>&, const EncoderConfig&, const Matrix<double>&,
                                                std::span<const Eigen::Index>, LmHeadTape<double>&);
template Matrix<float> lm_head_backward<float>(const LmHeadTape<float>&, const Matrix<float>&, ParamSet<float>&);
template Matrix<double> lm_head_backward<double>(const LmHeadTape<double>&, const Matrix<double>&, ParamSet<double>&);

}  // namespace ct::model
