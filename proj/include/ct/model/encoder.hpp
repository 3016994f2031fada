#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ct/model/config.hpp"
#include "ct/model/params.hpp"

namespace ct::model {

// Token ids and attention mask, row-major [batch x length].
struct EncodedBatch {
    int batch = 0;
    int length = 0;
    std::vector<std::int32_t> ids;
    std::vector<std::uint8_t> attention_mask;

    std::int32_t id(int b, int l) const { return ids[static_cast<std::size_t>(b) * length + l]; }
    bool attended(int b, int l) const { return attention_mask[static_cast<std::size_t>(b) * length + l] != 0; }
};

namespace names {
inline constexpr const char* word_embeddings = "embeddings.word_embeddings.weight";
inline constexpr const char* position_embeddings = "embeddings.position_embeddings.weight";
inline constexpr const char* embeddings_ln_weight = "embeddings.LayerNorm.weight";
inline constexpr const char* embeddings_ln_bias = "embeddings.LayerNorm.bias";
inline constexpr const char* lm_dense_weight = "lm_head.dense.weight";
inline constexpr const char* lm_dense_bias = "lm_head.dense.bias";
inline constexpr const char* lm_ln_weight = "lm_head.layer_norm.weight";
inline constexpr const char* lm_ln_bias = "lm_head.layer_norm.bias";
inline constexpr const char* lm_bias = "lm_head.bias";

// e.g. layer(1, "attention.self.query.weight")
std::string layer(int index, const char* suffix);
}  // namespace names

using EncoderParams = ParamSet<float>;

// Creates every tensor for cfg (encoder plus masked-LM head) with zero values.
template <typename Real>
ParamSet<Real> make_param_layout(const EncoderConfig& cfg);

// Weight matrices ~ Normal(0, 0.02); biases 0; layer-norm scale 1, shift 0.
EncoderParams init_params(const EncoderConfig& cfg, std::uint64_t seed);


template <typename Real>
struct LayerTape {
    Matrix<Real> input, q, k, v, context, attn_drop_mask, x1, ffn_pre, ffn_act, ffn_drop_mask;
    std::vector<Matrix<Real>> probs;       // [batch*heads] of [L x L], before dropout
    std::vector<Matrix<Real>> probs_drop;  // dropout scales, empty when off
    Matrix<Real> ln1_xhat, ln2_xhat;
    RowVector<Real> ln1_rstd, ln2_rstd;
};

// Everything backward() needs from one forward() call.
template <typename Real>
struct Tape {
    const ParamSet<Real>* params = nullptr;
    std::uint64_t params_version = 0;
    EncoderConfig cfg;
    EncodedBatch batch;
    Matrix<Real> emb_xhat, emb_drop_mask;
    RowVector<Real> emb_rstd;
    std::vector<LayerTape<Real>> layers;
    bool dropout_active = false;
};

template <typename Real>
struct ForwardResult {
    Matrix<Real> hidden;  // [batch*length x hidden], row b*length + l
    Tape<Real> tape;
};

// Post-LN BERT/RoBERTa encoder. Keys with attention_mask 0 receive a -inf
// pre-softmax bias. Dropout runs only when train_mode is set and rng given.
// Throws SequenceTooLong or IdOutOfRange for batches outside the config.
template <typename Real>
ForwardResult<Real> forward(const ParamSet<Real>& params, const EncoderConfig& cfg, const EncodedBatch& batch,
                            bool train_mode, std::mt19937_64* rng = nullptr);

// Accumulates d(loss)/d(params) into grads given d(loss)/d(hidden).
// Throws StaleTape if the parameters changed since the forward pass.
template <typename Real>
void backward_into(const Tape<Real>& tape, const Matrix<Real>& d_hidden, ParamSet<Real>& grads);

template <typename Real>
ParamSet<Real> backward(const Tape<Real>& tape, const Matrix<Real>& d_hidden);

void validate_batch(const EncoderConfig& cfg, const EncodedBatch& batch);

}  // namespace ct::model
