#include "ct/bpe/packing.hpp"

#include "ct/common/errors.hpp"

namespace ct::bpe {

PackResult pack_blocks(std::span<const TokenId> stream, std::size_t block_len) {
    if (block_len < 2) throw InvalidConfig("block_len must be at least 2");
    PackResult r;
    const std::size_t full = stream.size() / block_len;
    r.blocks.reserve(full);
    for (std::size_t b = 0; b < full; ++b) {
        auto piece = stream.subspan(b * block_len, block_len);
        r.blocks.push_back({{piece.begin(), piece.end()}, std::vector<std::uint8_t>(block_len, 1)});
    }
    r.dropped = stream.size() - full * block_len;
    return r;
}

PackResult pack_documents(const std::vector<std::vector<TokenId>>& documents, std::size_t block_len) {
    BlockPacker packer(block_len);
    for (const auto& d : documents) packer.add_document(d);
    return {packer.take_blocks(), packer.pending()};
}

BlockPacker::BlockPacker(std::size_t block_len) : block_len_(block_len) {
    if (block_len < 2) throw InvalidConfig("block_len must be at least 2");
    pending_.reserve(block_len);
}

void BlockPacker::push(TokenId id) {
    pending_.push_back(id);
    if (pending_.size() == block_len_) {
        ready_.push_back({std::move(pending_), std::vector<std::uint8_t>(block_len_, 1)});
        pending_ = {};
        pending_.reserve(block_len_);
    }
}

void BlockPacker::add_document(std::span<const TokenId> ids) {
    push(Special::cls);
    for (auto id : ids) push(id);
    push(Special::sep);
}

std::vector<TokenBlock> BlockPacker::take_blocks() {
    return std::exchange(ready_, {});
}

}  // namespace ct::bpe
