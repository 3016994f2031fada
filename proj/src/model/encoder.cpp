#include "ct/model/encoder.hpp"

#include <cmath>
#include <limits>

#include "ct/common/errors.hpp"
#include "ops.hpp"

namespace ct::model {

std::string names::layer(int index, const char* suffix) {
    return "encoder.layer." + std::to_string(index) + "." + suffix;
}

template <typename Real>
ParamSet<Real> make_param_layout(const EncoderConfig& cfg) {
    cfg.validate();
    const Eigen::Index h = cfg.hidden_size, inter = cfg.intermediate_size;
    ParamSet<Real> p;
    p.add(names::word_embeddings, cfg.vocab_size, h);
    p.add(names::position_embeddings, cfg.max_position_embeddings, h);
    p.add(names::embeddings_ln_weight, 1, h, 1);
    p.add(names::embeddings_ln_bias, 1, h, 1);
    for (int i = 0; i < cfg.num_hidden_layers; ++i) {
        for (const char* proj : {"attention.self.query", "attention.self.key", "attention.self.value",
                                 "attention.output.dense"}) {
            p.add(names::layer(i, (std::string(proj) + ".weight").c_str()), h, h);
            p.add(names::layer(i, (std::string(proj) + ".bias").c_str()), 1, h, 1);
        }
        p.add(names::layer(i, "attention.output.LayerNorm.weight"), 1, h, 1);
        p.add(names::layer(i, "attention.output.LayerNorm.bias"), 1, h, 1);
        p.add(names::layer(i, "intermediate.dense.weight"), h, inter);
        p.add(names::layer(i, "intermediate.dense.bias"), 1, inter, 1);
        p.add(names::layer(i, "output.dense.weight"), inter, h);
        p.add(names::layer(i, "output.dense.bias"), 1, h, 1);
        p.add(names::layer(i, "output.LayerNorm.weight"), 1, h, 1);
        p.add(names::layer(i, "output.LayerNorm.bias"), 1, h, 1);
    }
    p.add(names::lm_dense_weight, h, h);
    p.add(names::lm_dense_bias, 1, h, 1);
    p.add(names::lm_ln_weight, 1, h, 1);
    p.add(names::lm_ln_bias, 1, h, 1);
    p.add(names::lm_bias, 1, cfg.vocab_size, 1);
    return p;
}

EncoderParams init_params(const EncoderConfig& cfg, std::uint64_t seed) {
    auto p = make_param_layout<float>(cfg);
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 0.02f);
    for (auto& t : p.tensors()) {
        const auto& n = t.name;
        bool is_ln_scale = n.find("LayerNorm.weight") != std::string::npos ||
                           n.find("layer_norm.weight") != std::string::npos;
        if (is_ln_scale) {
            t.value.setOnes();
        } else if (t.rank == 2) {
            for (Eigen::Index i = 0; i < t.value.size(); ++i) t.value.data()[i] = normal(rng);
        } else {
            t.value.setZero();
        }
    }
    return p;
}

void validate_batch(const EncoderConfig& cfg, const EncodedBatch& batch) {
    if (batch.batch <= 0 || batch.length <= 0) throw ShapeMismatch("empty batch");
    const auto cells = static_cast<std::size_t>(batch.batch) * static_cast<std::size_t>(batch.length);
    if (batch.ids.size() != cells || batch.attention_mask.size() != cells)
        throw ShapeMismatch("ids/attention_mask size does not match batch x length");
    if (batch.length > cfg.max_position_embeddings)
        throw SequenceTooLong("length " + std::to_string(batch.length) + " exceeds max_position_embeddings " +
                              std::to_string(cfg.max_position_embeddings));
    for (auto id : batch.ids)
        if (id < 0 || id >= cfg.vocab_size)
            throw IdOutOfRange("token id " + std::to_string(id) + " outside vocab of " +
                               std::to_string(cfg.vocab_size));
    for (auto m : batch.attention_mask)
        if (m > 1) throw ShapeMismatch("attention_mask entries must be 0 or 1");
}

template <typename Real>
ForwardResult<Real> forward(const ParamSet<Real>& params, const EncoderConfig& cfg, const EncodedBatch& batch,
                            bool train_mode, std::mt19937_64* rng) {
    validate_batch(cfg, batch);
    const int B = batch.batch, L = batch.length, H = cfg.hidden_size;
    const int heads = cfg.num_attention_heads, dh = cfg.head_dim();
    const Eigen::Index N = static_cast<Eigen::Index>(B) * L;
    const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));
    const Real neg_inf = -std::numeric_limits<Real>::infinity();

    ForwardResult<Real> out;
    auto& tape = out.tape;
    tape.params = &params;
    tape.params_version = params.version();
    tape.cfg = cfg;
    tape.batch = batch;
    tape.dropout_active = train_mode && rng != nullptr;
    const bool hid_drop = tape.dropout_active && cfg.hidden_dropout_prob > 0.0;
    const bool att_drop = tape.dropout_active && cfg.attention_probs_dropout_prob > 0.0;

    const auto& word = params[names::word_embeddings];
    const auto& pos = params[names::position_embeddings];
    Matrix<Real> emb(N, H);
    for (int b = 0; b < B; ++b)
        for (int l = 0; l < L; ++l) emb.row(static_cast<Eigen::Index>(b) * L + l) = word.row(batch.id(b, l)) + pos.row(l);

    Matrix<Real> x = ops::layer_norm(emb, params[names::embeddings_ln_weight], params[names::embeddings_ln_bias],
                                     cfg.layer_norm_eps, tape.emb_xhat, tape.emb_rstd);
    if (hid_drop) {
        tape.emb_drop_mask = ops::dropout_mask<Real>(N, H, cfg.hidden_dropout_prob, *rng);
        x = x.cwiseProduct(tape.emb_drop_mask);
    }

    tape.layers.resize(static_cast<std::size_t>(cfg.num_hidden_layers));
    for (int i = 0; i < cfg.num_hidden_layers; ++i) {
        auto& lt = tape.layers[static_cast<std::size_t>(i)];
        auto P = [&](const char* suffix) -> const Matrix<Real>& { return params[names::layer(i, suffix)]; };
        lt.input = x;
        lt.q = (x * P("attention.self.query.weight")).rowwise() + P("attention.self.query.bias").row(0);
        lt.k = (x * P("attention.self.key.weight")).rowwise() + P("attention.self.key.bias").row(0);
        lt.v = (x * P("attention.self.value.weight")).rowwise() + P("attention.self.value.bias").row(0);
        lt.context.resize(N, H);
        lt.probs.resize(static_cast<std::size_t>(B) * heads);
        if (att_drop) lt.probs_drop.resize(static_cast<std::size_t>(B) * heads);

        for (int b = 0; b < B; ++b) {
            const Eigen::Index r0 = static_cast<Eigen::Index>(b) * L;
            for (int h = 0; h < heads; ++h) {
                const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
                Matrix<Real> s = (lt.q.block(r0, c0, L, dh) * lt.k.block(r0, c0, L, dh).transpose()) * scale;
                for (int key = 0; key < L; ++key)
                    if (!batch.attended(b, key)) s.col(key).setConstant(neg_inf);
                for (int row = 0; row < L; ++row) {
                    Real mx = s.row(row).maxCoeff();
                    if (!std::isfinite(mx)) {  // no attended keys at all
                        s.row(row).setZero();
                        continue;
                    }
                    s.row(row) = (s.row(row).array() - mx).exp().matrix();
                    // vectorized exp clamps -inf to a denormal rather than 0
                    for (int key = 0; key < L; ++key)
                        if (!batch.attended(b, key)) s(row, key) = Real(0);
                    s.row(row) /= s.row(row).sum();
                }
                auto slot = static_cast<std::size_t>(b) * heads + h;
                lt.probs[slot] = s;
                if (att_drop) {
                    lt.probs_drop[slot] = ops::dropout_mask<Real>(L, L, cfg.attention_probs_dropout_prob, *rng);
                    s = s.cwiseProduct(lt.probs_drop[slot]);
                }
                lt.context.block(r0, c0, L, dh) = s * lt.v.block(r0, c0, L, dh);
            }
        }

        Matrix<Real> attn = (lt.context * P("attention.output.dense.weight")).rowwise() +
                            P("attention.output.dense.bias").row(0);
        if (hid_drop) {
            lt.attn_drop_mask = ops::dropout_mask<Real>(N, H, cfg.hidden_dropout_prob, *rng);
            attn = attn.cwiseProduct(lt.attn_drop_mask);
        }
        Matrix<Real> r1 = x + attn;
        lt.x1 = ops::layer_norm(r1, P("attention.output.LayerNorm.weight"), P("attention.output.LayerNorm.bias"),
                                cfg.layer_norm_eps, lt.ln1_xhat, lt.ln1_rstd);

        lt.ffn_pre = (lt.x1 * P("intermediate.dense.weight")).rowwise() + P("intermediate.dense.bias").row(0);
        lt.ffn_act = lt.ffn_pre.unaryExpr([](Real v) { return ops::gelu(v); });
        Matrix<Real> ffn = (lt.ffn_act * P("output.dense.weight")).rowwise() + P("output.dense.bias").row(0);
        if (hid_drop) {
            lt.ffn_drop_mask = ops::dropout_mask<Real>(N, H, cfg.hidden_dropout_prob, *rng);
            ffn = ffn.cwiseProduct(lt.ffn_drop_mask);
        }
        Matrix<Real> r2 = lt.x1 + ffn;
        x = ops::layer_norm(r2, P("output.LayerNorm.weight"), P("output.LayerNorm.bias"), cfg.layer_norm_eps,
                            lt.ln2_xhat, lt.ln2_rstd);
    }
    out.hidden = std::move(x);
    return out;
}

template <typename Real>
void backward_into(const Tape<Real>& tape, const Matrix<Real>& d_hidden, ParamSet<Real>& grads) {
    if (tape.params == nullptr || tape.params->version() != tape.params_version)
        throw StaleTape("parameters changed after the forward pass");
    const auto& params = *tape.params;
    const auto& cfg = tape.cfg;
    const auto& batch = tape.batch;
    const int B = batch.batch, L = batch.length, H = cfg.hidden_size;
    const int heads = cfg.num_attention_heads, dh = cfg.head_dim();
    const Eigen::Index N = static_cast<Eigen::Index>(B) * L;
    if (d_hidden.rows() != N || d_hidden.cols() != H) throw ShapeMismatch("upstream gradient shape");
    const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));

    Matrix<Real> dx = d_hidden;
    for (int i = cfg.num_hidden_layers - 1; i >= 0; --i) {
        const auto& lt = tape.layers[static_cast<std::size_t>(i)];
        auto P = [&](const char* suffix) -> const Matrix<Real>& { return params[names::layer(i, suffix)]; };
        auto G = [&](const char* suffix) -> Matrix<Real>& { return grads[names::layer(i, suffix)]; };

        // Feed-forward block.
        Matrix<Real> dr2 = ops::layer_norm_backward(dx, lt.ln2_xhat, lt.ln2_rstd, P("output.LayerNorm.weight"),
                                                    G("output.LayerNorm.weight"), G("output.LayerNorm.bias"));
        Matrix<Real> dffn = lt.ffn_drop_mask.size() ? Matrix<Real>(dr2.cwiseProduct(lt.ffn_drop_mask)) : dr2;
        G("output.dense.weight").noalias() += lt.ffn_act.transpose() * dffn;
        G("output.dense.bias").row(0) += dffn.colwise().sum();
        Matrix<Real> dact = dffn * P("output.dense.weight").transpose();
        Matrix<Real> dpre = dact.cwiseProduct(lt.ffn_pre.unaryExpr([](Real v) { return ops::gelu_grad(v); }));
        G("intermediate.dense.weight").noalias() += lt.x1.transpose() * dpre;
        G("intermediate.dense.bias").row(0) += dpre.colwise().sum();
        Matrix<Real> dx1 = dr2 + dpre * P("intermediate.dense.weight").transpose();

        // Attention block.
        Matrix<Real> dr1 = ops::layer_norm_backward(dx1, lt.ln1_xhat, lt.ln1_rstd,
                                                    P("attention.output.LayerNorm.weight"),
                                                    G("attention.output.LayerNorm.weight"),
                                                    G("attention.output.LayerNorm.bias"));
        Matrix<Real> dattn = lt.attn_drop_mask.size() ? Matrix<Real>(dr1.cwiseProduct(lt.attn_drop_mask)) : dr1;
        G("attention.output.dense.weight").noalias() += lt.context.transpose() * dattn;
        G("attention.output.dense.bias").row(0) += dattn.colwise().sum();
        Matrix<Real> dctx = dattn * P("attention.output.dense.weight").transpose();

        Matrix<Real> dq(N, H), dk(N, H), dv(N, H);
        for (int b = 0; b < B; ++b) {
            const Eigen::Index r0 = static_cast<Eigen::Index>(b) * L;
            for (int h = 0; h < heads; ++h) {
                const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
                auto slot = static_cast<std::size_t>(b) * heads + h;
                const auto& probs = lt.probs[slot];
                const bool dropped = !lt.probs_drop.empty();
                Matrix<Real> used = dropped ? Matrix<Real>(probs.cwiseProduct(lt.probs_drop[slot])) : probs;
                Matrix<Real> dctx_bh = dctx.block(r0, c0, L, dh);
                dv.block(r0, c0, L, dh) = used.transpose() * dctx_bh;
                Matrix<Real> dp = dctx_bh * lt.v.block(r0, c0, L, dh).transpose();
                if (dropped) dp = dp.cwiseProduct(lt.probs_drop[slot]);
                Matrix<Real> ds(L, L);
                for (int row = 0; row < L; ++row) {
                    Real dot = dp.row(row).dot(probs.row(row));
                    ds.row(row) = probs.row(row).cwiseProduct((dp.row(row).array() - dot).matrix());
                }
                ds *= scale;
                dq.block(r0, c0, L, dh) = ds * lt.k.block(r0, c0, L, dh);
                dk.block(r0, c0, L, dh) = ds.transpose() * lt.q.block(r0, c0, L, dh);
            }
        }
        G("attention.self.query.weight").noalias() += lt.input.transpose() * dq;
        G("attention.self.query.bias").row(0) += dq.colwise().sum();
        G("attention.self.key.weight").noalias() += lt.input.transpose() * dk;
        G("attention.self.key.bias").row(0) += dk.colwise().sum();
        G("attention.self.value.weight").noalias() += lt.input.transpose() * dv;
        G("attention.self.value.bias").row(0) += dv.colwise().sum();
        dx = dr1;
        dx.noalias() += dq * P("attention.self.query.weight").transpose();
        dx.noalias() += dk * P("attention.self.key.weight").transpose();
        dx.noalias() += dv * P("attention.self.value.weight").transpose();
    }

    if (tape.emb_drop_mask.size()) dx = dx.cwiseProduct(tape.emb_drop_mask);
    Matrix<Real> demb = ops::layer_norm_backward(dx, tape.emb_xhat, tape.emb_rstd, params[names::embeddings_ln_weight],
                                                 grads[names::embeddings_ln_weight], grads[names::embeddings_ln_bias]);
    auto& dword = grads[names::word_embeddings];
    auto& dpos = grads[names::position_embeddings];
    for (int b = 0; b < B; ++b)
        for (int l = 0; l < L; ++l) {
            auto r = static_cast<Eigen::Index>(b) * L + l;
            dword.row(batch.id(b, l)) += demb.row(r);
            dpos.row(l) += demb.row(r);
        }
}

template <typename Real>
ParamSet<Real> backward(const Tape<Real>& tape, const Matrix<Real>& d_hidden) {
    if (tape.params == nullptr) throw StaleTape("tape was never recorded");
    auto grads = tape.params->zeros_like();
    backward_into(tape, d_hidden, grads);
    return grads;
}

template ParamSet<float> make_param_layout<float>(const EncoderConfig&);
template ParamSet<double> make_param_layout<double>(const EncoderConfig&);
template ForwardResult<float> forward<float>(const ParamSet<float>&, const EncoderConfig&, const EncodedBatch&, bool,
                                             std::mt19937_64*);
template ForwardResult<double> forward<double>(const ParamSet<double>&, const EncoderConfig&, const EncodedBatch&,
                                               bool, std::mt19937_64*);
template void backward_into<float>(const Tape<float>&, const Matrix<float>&, ParamSet<float>&);
template void backward_into<double>(const Tape<double>&, const Matrix<double>&, ParamSet<double>&);
template ParamSet<float> backward<float>(const Tape<float>&, const Matrix<float>&);
template ParamSet<double> backward<double>(const Tape<double>&, const Matrix<double>&);

}  // namespace ct::model
