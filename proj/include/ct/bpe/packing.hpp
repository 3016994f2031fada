#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ct/bpe/tokenizer.hpp"

namespace ct::bpe {

struct TokenBlock {
    std::vector<TokenId> ids;
    std::vector<std::uint8_t> attention_mask;
    bool operator==(const TokenBlock&) const = default;
};

struct PackResult {
    std::vector<TokenBlock> blocks;
    std::size_t dropped = 0;  // tokens in the discarded partial block
};

// Cuts a flat token stream into full blocks; the trailing partial block is dropped.
PackResult pack_blocks(std::span<const TokenId> stream, std::size_t block_len = 128);

// Frames each document as cls + ids + sep and packs the documents contiguously.
PackResult pack_documents(const std::vector<std::vector<TokenId>>& documents, std::size_t block_len = 128);

// Streaming form of pack_documents for corpora that do not fit in memory.
class BlockPacker {
public:
    explicit BlockPacker(std::size_t block_len = 128);

    void add_document(std::span<const TokenId> ids);
    // Moves out the blocks completed so far.
    std::vector<TokenBlock> take_blocks();
    // Tokens waiting in the partial block; these are dropped at the end of a pass.
    std::size_t pending() const { return pending_.size(); }

private:
    void push(TokenId id);

    std::size_t block_len_;
    std::vector<TokenId> pending_;
    std::vector<TokenBlock> ready_;
};

}  // namespace ct::bpe
