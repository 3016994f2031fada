#include "ct/pooling/pooling.hpp"

#include "ct/common/errors.hpp"

namespace ct::pooling {

Strategy parse_strategy(std::string_view name) {
    if (name == "mean") return Strategy::mean_with_attention;
    if (name == "cls") return Strategy::cls;
    if (name == "max") return Strategy::max;
    if (name == "mean-noattn") return Strategy::mean_without_attention;
    throw InvalidConfig("unknown pooling strategy '" + std::string(name) + "' (mean, cls, max, mean-noattn)");
}

std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::mean_with_attention: return "mean";
        case Strategy::cls: return "cls";
        case Strategy::max: return "max";
        case Strategy::mean_without_attention: return "mean-noattn";
    }
    return "mean";
}

namespace {

// Pools rows [first, first + len) of a matrix; records max sources if asked.
template <typename Real>
model::RowVector<Real> pool_rows(const model::Matrix<Real>& m, Eigen::Index first, Eigen::Index len,
                                 const std::uint8_t* mask, Strategy s, Eigen::Index* argmax) {
    const auto H = m.cols();
    if (len == 0) throw EmptyInput("cannot pool an empty sequence");
    model::RowVector<Real> out = model::RowVector<Real>::Zero(H);
    switch (s) {
        case Strategy::cls:
            out = m.row(first);
            break;
        case Strategy::mean_without_attention:
            for (Eigen::Index i = 0; i < len; ++i) out += m.row(first + i);
            out /= static_cast<Real>(len);
            break;
        case Strategy::mean_with_attention: {
            Eigen::Index n = 0;
            for (Eigen::Index i = 0; i < len; ++i)
                if (mask[i]) {
                    out += m.row(first + i);
                    ++n;
                }
            if (n == 0) throw AllMasked("mean pooling needs at least one attended position");
            out /= static_cast<Real>(n);
            break;
        }
        case Strategy::max: {
            bool any = false;
            for (Eigen::Index i = 0; i < len; ++i) {
                if (!mask[i]) continue;
                for (Eigen::Index h = 0; h < H; ++h)
                    if (!any || m(first + i, h) > out(h)) {
                        out(h) = m(first + i, h);
                        if (argmax) argmax[h] = first + i;
                    }
                any = true;
            }
            if (!any) throw AllMasked("max pooling needs at least one attended position");
            break;
        }
    }
    return out;
}

}  // namespace

template <typename Real>
model::RowVector<Real> pool(const model::Matrix<Real>& rows, std::span<const std::uint8_t> mask, Strategy s) {
    if (static_cast<std::size_t>(rows.rows()) != mask.size()) throw LengthMismatch("mask length != row count");
    return pool_rows<Real>(rows, 0, rows.rows(), mask.data(), s, nullptr);
}

template <typename Real>
model::Matrix<Real> pool_batch(const model::Matrix<Real>& hidden, const model::EncodedBatch& batch, Strategy s,
                               PoolTape* tape) {
    const Eigen::Index B = batch.batch, L = batch.length, H = hidden.cols();
    if (hidden.rows() != B * L || batch.attention_mask.size() != static_cast<std::size_t>(B * L))
        throw ShapeMismatch("hidden rows do not match batch x length");
    model::Matrix<Real> out(B, H);
    std::vector<Eigen::Index> argmax(s == Strategy::max ? static_cast<std::size_t>(B * H) : 0);
    for (Eigen::Index b = 0; b < B; ++b)
        out.row(b) = pool_rows<Real>(hidden, b * L, L, batch.attention_mask.data() + b * L, s,
                                     argmax.empty() ? nullptr : argmax.data() + b * H);
    if (tape) *tape = PoolTape{s, batch.batch, batch.length, batch.attention_mask, std::move(argmax)};
    return out;
}

template <typename Real>
model::Matrix<Real> pool_backward(const PoolTape& tape, const model::Matrix<Real>& d_pooled) {
    const Eigen::Index B = tape.batch, L = tape.length, H = d_pooled.cols();
    if (d_pooled.rows() != B) throw ShapeMismatch("pooled gradient rows != batch");
    model::Matrix<Real> d = model::Matrix<Real>::Zero(B * L, H);
    for (Eigen::Index b = 0; b < B; ++b) {
        const std::uint8_t* mask = tape.mask.data() + b * L;
        switch (tape.strategy) {
            case Strategy::cls:
                d.row(b * L) = d_pooled.row(b);
                break;
            case Strategy::mean_without_attention:
                for (Eigen::Index i = 0; i < L; ++i) d.row(b * L + i) = d_pooled.row(b) / static_cast<Real>(L);
                break;
            case Strategy::mean_with_attention: {
                Eigen::Index n = 0;
                for (Eigen::Index i = 0; i < L; ++i) n += mask[i] ? 1 : 0;
                for (Eigen::Index i = 0; i < L; ++i)
                    if (mask[i]) d.row(b * L + i) = d_pooled.row(b) / static_cast<Real>(n);
                break;
            }
            case Strategy::max:
                for (Eigen::Index h = 0; h < H; ++h) d(tape.argmax[static_cast<std::size_t>(b * H + h)], h) += d_pooled(b, h);
                break;
        }
    }
    return d;
}

template model::RowVector<float> pool<float>(const model::Matrix<float>&, std::span<const std::uint8_t>, Strategy);
template model::RowVector<double> pool<double>(const model::Matrix<double>&, std::span<const std::uint8_t>, Strategy);
template model::Matrix<float> pool_batch<float>(const model::Matrix<float>&, const model::EncodedBatch&, Strategy,
                                                PoolTape*);
template model::Matrix<double> pool_batch<double>(const model::Matrix<double>&, const model::EncodedBatch&, Strategy,
                                                  PoolTape*);
template model::Matrix<float> pool_backward<float>(const PoolTape&, const model::Matrix<float>&);
template model::Matrix<double> pool_backward<double>(const PoolTape&, const model::Matrix<double>&);

}  // namespace ct::pooling
