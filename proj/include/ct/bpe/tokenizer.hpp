#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ct::bpe {

using TokenId = std::int32_t;

// Reserved ids, in this order, ahead of the 256 byte tokens.
struct Special {
    static constexpr TokenId pad = 0;
    static constexpr TokenId unk = 1;
    static constexpr TokenId cls = 2;
    static constexpr TokenId sep = 3;
    static constexpr TokenId mask = 4;
    static constexpr std::size_t count = 5;
    static constexpr std::array<std::string_view, count> names = {"<pad>", "<unk>", "<s>", "</s>", "<mask>"};
};

inline constexpr std::size_t kDefaultVocabSize = 64000;
inline constexpr std::size_t kMinVocabSize = 256 + Special::count;

struct MergeRule {
    TokenId left;
    TokenId right;
    TokenId result;
    bool operator==(const MergeRule&) const = default;
};

// Splits text into pre-token chunks whose concatenation is the input:
// a run of letters (ASCII letters and all non-ASCII bytes), digits or
// other symbols, optionally led by one space; leftover whitespace runs.
std::vector<std::string_view> pretokenize(std::string_view text);

// GPT-2 style printable rendering of raw bytes, used in vocab.json/merges.txt.
std::string bytes_to_printable(std::string_view raw);
std::string printable_to_bytes(std::string_view printable);

// Byte-level BPE model. Immutable once built; encode/decode are thread-safe.
class Tokenizer {
public:
    // Greedy BPE: repeatedly merges the most frequent adjacent pair,
    // ties broken toward the lexicographically smaller (left, right) byte
    // strings, until vocab_size entries exist or no pair remains.
    static Tokenizer train(const std::vector<std::string>& corpus, std::size_t vocab_size = kDefaultVocabSize);

    static Tokenizer load(const std::filesystem::path& dir);
    // Writes vocab.json and merges.txt into dir (created if missing).
    void save(const std::filesystem::path& dir) const;

    std::vector<TokenId> encode(std::string_view text) const;
    // Special ids decode to nothing.
    std::string decode(std::span<const TokenId> ids) const;

    std::size_t vocab_size() const { return tokens_.size(); }
    const std::vector<MergeRule>& merges() const { return merges_; }
    const std::string& token_bytes(TokenId id) const;
    std::string token_string(TokenId id) const;
    static bool is_special(TokenId id) { return id >= 0 && static_cast<std::size_t>(id) < Special::count; }
    TokenId byte_token(unsigned char b) const { return byte_ids_[b]; }

    bool operator==(const Tokenizer& other) const {
        return tokens_ == other.tokens_ && merges_ == other.merges_;
    }

private:
    Tokenizer() = default;
    void build_indexes();
    void encode_chunk(std::string_view chunk, std::vector<TokenId>& out) const;

    std::vector<std::string> tokens_;  // raw bytes per id (names for specials)
    std::vector<MergeRule> merges_;
    std::array<TokenId, 256> byte_ids_{};
    std::unordered_map<std::uint64_t, std::uint32_t> merge_rank_;
};

struct VocabOverlap {
    std::size_t intersection = 0;
    std::size_t unique_in_a = 0;
};

// Compares token strings, special tokens excluded.
VocabOverlap vocab_intersection(const Tokenizer& a, const Tokenizer& b);

}  // namespace ct::bpe
