#include "ct/train/masking.hpp"

#include <cmath>

#include "ct/common/errors.hpp"

namespace ct::train {

void MaskingPolicy::validate() const {
    for (double f : {mask_prob, mask_token_frac, random_token_frac, keep_frac})
        if (!(f >= 0.0 && f <= 1.0)) throw InvalidConfig("masking probabilities must lie in [0, 1]");
    if (std::abs(mask_token_frac + random_token_frac + keep_frac - 1.0) > 1e-9)
        throw InvalidConfig("mask/random/keep fractions must sum to 1");
}

MaskedBlock apply_masking(const bpe::TokenBlock& block, const MaskingPolicy& policy, int vocab_size,
                          std::mt19937_64& rng) {
    policy.validate();
    if (block.ids.size() != block.attention_mask.size()) throw ShapeMismatch("ids and attention_mask differ in length");
    const auto first_regular = static_cast<int>(bpe::Special::count);
    if (vocab_size <= first_regular) throw InvalidConfig("vocabulary has no regular tokens");

    MaskedBlock out{block, std::vector<std::int32_t>(block.ids.size(), kIgnoreLabel)};
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::int32_t> random_id(first_regular, vocab_size - 1);
    for (std::size_t i = 0; i < block.ids.size(); ++i) {
        const auto id = block.ids[i];
        if (block.attention_mask[i] == 0 || bpe::Tokenizer::is_special(id)) continue;
        if (!(unit(rng) < policy.mask_prob)) continue;
        out.labels[i] = id;
        const double r = unit(rng);
        if (r < policy.mask_token_frac) {
            out.block.ids[i] = bpe::Special::mask;
        } else if (r < policy.mask_token_frac + policy.random_token_frac) {
            out.block.ids[i] = random_id(rng);
        }
    }
    return out;
}

}  // namespace ct::train
