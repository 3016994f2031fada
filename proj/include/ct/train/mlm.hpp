#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "ct/bpe/packing.hpp"
#include "ct/model/encoder.hpp"
#include "ct/train/masking.hpp"

namespace ct::train {

// Mean natural-log cross-entropy of logits [n x V] against labels [n].
// Throws NoMaskedPositions when n == 0.
template <typename Real>
double mlm_loss(const model::Matrix<Real>& logits, std::span<const std::int32_t> labels);

// Same loss; also writes d(loss)/d(logits) into d_logits.
template <typename Real>
double mlm_loss_grad(const model::Matrix<Real>& logits, std::span<const std::int32_t> labels,
                     model::Matrix<Real>& d_logits);

struct MlmBatch {
    model::EncodedBatch inputs;
    std::vector<std::int32_t> labels;  // per cell, kIgnoreLabel where not selected
};

MlmBatch make_mlm_batch(std::span<const MaskedBlock> blocks);

struct MlmResult {
    double loss = 0.0;           // mean over selected positions
    std::size_t positions = 0;   // number of selected positions
};

// Encoder + masked-LM head + loss. When grads is non-null the gradient of the
// mean loss, multiplied by grad_scale, is accumulated into it.
template <typename Real>
MlmResult mlm_forward_backward(const model::ParamSet<Real>& params, const model::EncoderConfig& cfg,
                               const MlmBatch& batch, bool train_mode, std::mt19937_64* rng,
                               model::ParamSet<Real>* grads, double grad_scale = 1.0);

}  // namespace ct::train
