#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "ct/bpe/packing.hpp"

namespace ct::train {

inline constexpr std::int32_t kIgnoreLabel = -100;

// BERT-style corruption: each eligible position is selected with mask_prob;
// a selected position becomes <mask>, a random token, or stays as is in the
// given proportions.
struct MaskingPolicy {
    double mask_prob = 0.15;
    double mask_token_frac = 0.8;
    double random_token_frac = 0.1;
    double keep_frac = 0.1;

    // Throws InvalidConfig unless the three fractions sum to 1 and all lie in [0, 1].
    void validate() const;
};

struct MaskedBlock {
    bpe::TokenBlock block;
    std::vector<std::int32_t> labels;  // original id where selected, kIgnoreLabel elsewhere
};

// Special tokens and padded (mask 0) positions are never selected.
// Random replacements are drawn from the non-special ids [5, vocab_size).
MaskedBlock apply_masking(const bpe::TokenBlock& block, const MaskingPolicy& policy, int vocab_size,
                          std::mt19937_64& rng);

}  // namespace ct::train
