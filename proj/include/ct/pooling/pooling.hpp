#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ct/model/encoder.hpp"
#include "ct/model/params.hpp"

namespace ct::pooling {

enum class Strategy { mean_with_attention, cls, max, mean_without_attention };

// CLI names: mean, cls, max, mean-noattn. Throws InvalidConfig otherwise.
Strategy parse_strategy(std::string_view name);
std::string to_string(Strategy s);

// Reduces token rows [L x H] to one vector [H].
//   mean_with_attention: average of rows with mask 1
//   cls: row 0, mask ignored
//   max: per-dimension max over rows with mask 1
//   mean_without_attention: average of all L rows
// Throws AllMasked when mean_with_attention or max sees no attended row,
// EmptyInput when L == 0 and LengthMismatch when mask and rows disagree.
template <typename Real>
model::RowVector<Real> pool(const model::Matrix<Real>& rows, std::span<const std::uint8_t> mask, Strategy s);

// What pool_backward needs from a batched pooling call.
struct PoolTape {
    Strategy strategy = Strategy::mean_with_attention;
    int batch = 0;
    int length = 0;
    std::vector<std::uint8_t> mask;
    std::vector<Eigen::Index> argmax;  // [batch x hidden] source row for max pooling
};

// Pools every sequence of an encoder output [B*L x H] into [B x H].
template <typename Real>
model::Matrix<Real> pool_batch(const model::Matrix<Real>& hidden, const model::EncodedBatch& batch, Strategy s,
                               PoolTape* tape = nullptr);

// Gradient of the pooled rows back onto the encoder output rows.
template <typename Real>
model::Matrix<Real> pool_backward(const PoolTape& tape, const model::Matrix<Real>& d_pooled);

}  // namespace ct::pooling
