#include "ct/train/mlm.hpp"

#include <cmath>

#include "ct/common/errors.hpp"
#include "ct/model/lm_head.hpp"

namespace ct::train {

namespace {

template <typename Real>
double loss_impl(const model::Matrix<Real>& logits, std::span<const std::int32_t> labels,
                 model::Matrix<Real>* d_logits) {
    const auto n = logits.rows();
    if (n == 0 || labels.empty()) throw NoMaskedPositions("no selected positions to score");
    if (static_cast<std::size_t>(n) != labels.size()) throw ShapeMismatch("logits rows != labels");
    if (d_logits) d_logits->resize(n, logits.cols());
    double total = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) {
        const auto label = labels[static_cast<std::size_t>(r)];
        if (label < 0 || label >= logits.cols()) throw IdOutOfRange("label " + std::to_string(label));
        const double mx = static_cast<double>(logits.row(r).maxCoeff());
        double sum = 0.0;
        for (Eigen::Index c = 0; c < logits.cols(); ++c) sum += std::exp(static_cast<double>(logits(r, c)) - mx);
        const double lse = mx + std::log(sum);
        total += lse - static_cast<double>(logits(r, label));
        if (d_logits) {
            for (Eigen::Index c = 0; c < logits.cols(); ++c)
                (*d_logits)(r, c) = static_cast<Real>(std::exp(static_cast<double>(logits(r, c)) - lse) /
                                                      static_cast<double>(n));
            (*d_logits)(r, label) -= static_cast<Real>(1.0 / static_cast<double>(n));
        }
    }
    return total / static_cast<double>(n);
}

}  // namespace

template <typename Real>
double mlm_loss(const model::Matrix<Real>& logits, std::span<const std::int32_t> labels) {
    return loss_impl<Real>(logits, labels, nullptr);
}

template <typename Real>
double mlm_loss_grad(const model::Matrix<Real>& logits, std::span<const std::int32_t> labels,
                     model::Matrix<Real>& d_logits) {
    return loss_impl<Real>(logits, labels, &d_logits);
}

MlmBatch make_mlm_batch(std::span<const MaskedBlock> blocks) {
    MlmBatch out;
    if (blocks.empty()) throw ShapeMismatch("empty MLM batch");
    const auto len = blocks.front().block.ids.size();
    out.inputs.batch = static_cast<int>(blocks.size());
    out.inputs.length = static_cast<int>(len);
    for (const auto& b : blocks) {
        if (b.block.ids.size() != len || b.labels.size() != len) throw ShapeMismatch("blocks differ in length");
        out.inputs.ids.insert(out.inputs.ids.end(), b.block.ids.begin(), b.block.ids.end());
        out.inputs.attention_mask.insert(out.inputs.attention_mask.end(), b.block.attention_mask.begin(),
                                         b.block.attention_mask.end());
        out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    }
    return out;
}

template <typename Real>
MlmResult mlm_forward_backward(const model::ParamSet<Real>& params, const model::EncoderConfig& cfg,
                               const MlmBatch& batch, bool train_mode, std::mt19937_64* rng,
                               model::ParamSet<Real>* grads, double grad_scale) {
    std::vector<Eigen::Index> rows;
    std::vector<std::int32_t> targets;
    for (std::size_t i = 0; i < batch.labels.size(); ++i)
        if (batch.labels[i] != kIgnoreLabel) {
            rows.push_back(static_cast<Eigen::Index>(i));
            targets.push_back(batch.labels[i]);
        }
    if (rows.empty()) throw NoMaskedPositions("batch has no selected positions");

    auto fwd = model::forward(params, cfg, batch.inputs, train_mode, rng);
    model::LmHeadTape<Real> head_tape;
    auto logits = model::lm_head_forward(params, cfg, fwd.hidden, rows, head_tape);
    MlmResult result{0.0, rows.size()};
    if (!grads) {
        result.loss = mlm_loss<Real>(logits, targets);
        return result;
    }
    model::Matrix<Real> d_logits;
    result.loss = mlm_loss_grad<Real>(logits, targets, d_logits);
    if (grad_scale != 1.0) d_logits *= static_cast<Real>(grad_scale);
    auto d_hidden = model::lm_head_backward(head_tape, d_logits, *grads);
    model::backward_into(fwd.tape, d_hidden, *grads);
    return result;
}

template double mlm_loss<float>(const model::Matrix<float>&, std::span<const std::int32_t>);
template double mlm_loss<double>(const model::Matrix<double>&, std::span<const std::int32_t>);
template double mlm_loss_grad<float>(const model::Matrix<float>&, std::span<const std::int32_t>, model::Matrix<float>&);
template double mlm_loss_grad<double>(const model::Matrix<double>&, std::span<const std::int32_t>,
                                      model::Matrix<double>&);
template MlmResult mlm_forward_backward<float>(const model::ParamSet<float>&, const model::EncoderConfig&,
                                               const MlmBatch&, bool, std::mt19937_64*, model::ParamSet<float>*,
                                               double);
template MlmResult mlm_forward_backward<double>(const model::ParamSet<double>&, const model::EncoderConfig&,
                                                const MlmBatch&, bool, std::mt19937_64*, model::ParamSet<double>*,
                                                double);

}  // namespace ct::train
