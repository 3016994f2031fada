#include "ct/bpe/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <queue>
#include <set>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "ct/common/errors.hpp"
#include "ct/common/io.hpp"
#include "ct/common/parallel.hpp"
#include "ct/common/utf8.hpp"

namespace ct::bpe {
namespace {

enum class CharClass { space, letter, digit, other };

CharClass classify(unsigned char c) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') return CharClass::space;
    if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80) return CharClass::letter;
    if (c >= '0' && c <= '9') return CharClass::digit;
    return CharClass::other;
}

std::uint64_t pair_key(TokenId a, TokenId b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

const std::array<char32_t, 256>& byte_to_cp() {
    static const auto table = [] {
        std::array<char32_t, 256> t{};
        std::array<bool, 256> direct{};
        for (int b = '!'; b <= '~'; ++b) direct[b] = true;
        for (int b = 0xA1; b <= 0xAC; ++b) direct[b] = true;
        for (int b = 0xAE; b <= 0xFF; ++b) direct[b] = true;
        char32_t next = 256;
        for (int b = 0; b < 256; ++b) t[b] = direct[b] ? static_cast<char32_t>(b) : next++;
        return t;
    }();
    return table;
}

const std::unordered_map<char32_t, unsigned char>& cp_to_byte() {
    static const auto table = [] {
        std::unordered_map<char32_t, unsigned char> t;
        const auto& fwd = byte_to_cp();
        for (int b = 0; b < 256; ++b) t.emplace(fwd[b], static_cast<unsigned char>(b));
        return t;
    }();
    return table;
}

struct HeapEntry {
    std::int64_t count;
    TokenId left;
    TokenId right;
};

}  // namespace

std::vector<std::string_view> pretokenize(std::string_view text) {
    std::vector<std::string_view> chunks;
    const std::size_t n = text.size();
    auto cls = [&](std::size_t i) { return classify(static_cast<unsigned char>(text[i])); };
    std::size_t i = 0;
    while (i < n) {
        std::size_t start = i;
        if (text[i] == ' ' && i + 1 < n && cls(i + 1) != CharClass::space) {
            auto c = cls(i + 1);
            i += 2;
            while (i < n && cls(i) == c) ++i;
        } else if (cls(i) == CharClass::space) {
            while (i < n && cls(i) == CharClass::space) ++i;
            // Leave a trailing ' ' to lead the next word.
            if (i < n && i - start > 1 && text[i - 1] == ' ') --i;
        } else {
            auto c = cls(i);
            while (i < n && cls(i) == c) ++i;
        }
        chunks.push_back(text.substr(start, i - start));
    }
    return chunks;
}

std::string bytes_to_printable(std::string_view raw) {
    std::string out;
    const auto& table = byte_to_cp();
    for (unsigned char b : raw) utf8::append(out, table[b]);
    return out;
}

std::string printable_to_bytes(std::string_view printable) {
    if (!utf8::is_valid(printable)) throw ParseError("token is not valid UTF-8");
    const auto& table = cp_to_byte();
    std::string out;
    for (std::size_t i = 0; i < printable.size();) {
        auto d = utf8::decode_at(printable, i);
        auto it = table.find(d.cp);
        if (it == table.end()) throw ParseError("character outside the byte alphabet in token '" +
                                                std::string(printable) + "'");
        out += static_cast<char>(it->second);
        i += d.len;
    }
    return out;
}

Tokenizer Tokenizer::train(const std::vector<std::string>& corpus, std::size_t vocab_size) {
    if (vocab_size < kMinVocabSize)
        throw InvalidConfig("vocab_size must be at least " + std::to_string(kMinVocabSize));

    // Chunk frequencies, counted per shard and summed.
    auto shards = std::min<std::size_t>(worker_count(), std::max<std::size_t>(1, corpus.size() / 2048));
    std::vector<std::unordered_map<std::string, std::uint64_t>> partial(shards);
    parallel_shards(corpus.size(), shards, [&](std::size_t s, std::size_t begin, std::size_t end) {
        for (auto i = begin; i < end; ++i)
            for (auto chunk : pretokenize(corpus[i])) ++partial[s][std::string(chunk)];
    });
    std::map<std::string, std::uint64_t> chunk_counts;
    for (auto& p : partial)
        for (auto& [k, v] : p) chunk_counts[k] += v;
    if (chunk_counts.empty()) throw EmptyCorpus("corpus contains no bytes");

    Tokenizer tok;
    for (auto name : Special::names) tok.tokens_.emplace_back(name);
    for (int b = 0; b < 256; ++b) {
        tok.byte_ids_[b] = static_cast<TokenId>(tok.tokens_.size());
        tok.tokens_.emplace_back(1, static_cast<char>(b));
    }
    const std::set<std::string, std::less<>> reserved(Special::names.begin(), Special::names.end());

    std::vector<std::vector<TokenId>> words;
    std::vector<std::int64_t> freq;
    words.reserve(chunk_counts.size());
    for (const auto& [chunk, count] : chunk_counts) {
        std::vector<TokenId> syms;
        syms.reserve(chunk.size());
        for (unsigned char c : chunk) syms.push_back(tok.byte_ids_[c]);
        words.push_back(std::move(syms));
        freq.push_back(static_cast<std::int64_t>(count));
    }

    std::unordered_map<std::uint64_t, std::int64_t> pair_counts;
    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> where;
    for (std::uint32_t w = 0; w < words.size(); ++w) {
        const auto& s = words[w];
        for (std::size_t k = 0; k + 1 < s.size(); ++k) {
            auto key = pair_key(s[k], s[k + 1]);
            pair_counts[key] += freq[w];
            where[key].push_back(w);
        }
    }

    const auto& tokens = tok.tokens_;
    auto worse = [&tokens](const HeapEntry& x, const HeapEntry& y) {
        if (x.count != y.count) return x.count < y.count;
        const auto& xl = tokens[x.left];
        const auto& yl = tokens[y.left];
        if (xl != yl) return xl > yl;
        return tokens[x.right] > tokens[y.right];
    };
    std::priority_queue<HeapEntry, std::vector<HeapEntry>, decltype(worse)> heap(worse);
    for (const auto& [key, count] : pair_counts)
        heap.push({count, static_cast<TokenId>(key >> 32), static_cast<TokenId>(key & 0xFFFFFFFFu)});

    std::unordered_set<std::uint64_t> touched;
    while (tok.tokens_.size() < vocab_size && !heap.empty()) {
        auto top = heap.top();
        heap.pop();
        auto key = pair_key(top.left, top.right);
        auto it = pair_counts.find(key);
        std::int64_t current = it == pair_counts.end() ? 0 : it->second;
        if (current != top.count) {
            if (current > 0) heap.push({current, top.left, top.right});
            continue;
        }
        if (current <= 0) continue;
        std::string merged = tokens[top.left] + tokens[top.right];
        if (reserved.count(merged)) continue;  // never mint a special token

        auto new_id = static_cast<TokenId>(tok.tokens_.size());
        tok.tokens_.push_back(std::move(merged));
        tok.merges_.push_back({top.left, top.right, new_id});

        auto members = std::move(where[key]);
        where.erase(key);
        std::sort(members.begin(), members.end());
        members.erase(std::unique(members.begin(), members.end()), members.end());
        touched.clear();
        for (auto w : members) {
            auto& s = words[w];
            bool present = false;
            for (std::size_t k = 0; k + 1 < s.size() && !present; ++k)
                present = s[k] == top.left && s[k + 1] == top.right;
            if (!present) continue;
            for (std::size_t k = 0; k + 1 < s.size(); ++k) {
                auto old_key = pair_key(s[k], s[k + 1]);
                pair_counts[old_key] -= freq[w];
                touched.insert(old_key);
            }
            std::vector<TokenId> rewritten;
            rewritten.reserve(s.size());
            for (std::size_t k = 0; k < s.size();) {
                if (k + 1 < s.size() && s[k] == top.left && s[k + 1] == top.right) {
                    rewritten.push_back(new_id);
                    k += 2;
                } else {
                    rewritten.push_back(s[k++]);
                }
            }
            s = std::move(rewritten);
            for (std::size_t k = 0; k + 1 < s.size(); ++k) {
                auto new_key = pair_key(s[k], s[k + 1]);
                auto& list = where[new_key];
                if (list.empty() || list.back() != w) list.push_back(w);
                pair_counts[new_key] += freq[w];
                touched.insert(new_key);
            }
        }
        pair_counts.erase(key);
        for (auto t : touched) {
            auto c = pair_counts.find(t);
            if (c == pair_counts.end()) continue;
            if (c->second <= 0) {
                pair_counts.erase(c);
                continue;
            }
            heap.push({c->second, static_cast<TokenId>(t >> 32), static_cast<TokenId>(t & 0xFFFFFFFFu)});
        }
    }
    tok.build_indexes();
    return tok;
}

void Tokenizer::build_indexes() {
    merge_rank_.clear();
    for (std::uint32_t r = 0; r < merges_.size(); ++r)
        merge_rank_.emplace(pair_key(merges_[r].left, merges_[r].right), r);
}

const std::string& Tokenizer::token_bytes(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
        throw IdOutOfRange("token id " + std::to_string(id) + " outside vocabulary of " +
                           std::to_string(tokens_.size()));
    return tokens_[static_cast<std::size_t>(id)];
}

std::string Tokenizer::token_string(TokenId id) const {
    const auto& raw = token_bytes(id);
    return is_special(id) ? raw : bytes_to_printable(raw);
}

void Tokenizer::encode_chunk(std::string_view chunk, std::vector<TokenId>& out) const {
    std::vector<TokenId> syms;
    syms.reserve(chunk.size());
    for (unsigned char c : chunk) syms.push_back(byte_ids_[c]);
    while (syms.size() > 1) {
        std::uint32_t best_rank = UINT32_MAX;
        for (std::size_t k = 0; k + 1 < syms.size(); ++k) {
            auto it = merge_rank_.find(pair_key(syms[k], syms[k + 1]));
            if (it != merge_rank_.end() && it->second < best_rank) best_rank = it->second;
        }
        if (best_rank == UINT32_MAX) break;
        const auto& rule = merges_[best_rank];
        std::size_t w = 0;
        for (std::size_t k = 0; k < syms.size();) {
            if (k + 1 < syms.size() && syms[k] == rule.left && syms[k + 1] == rule.right) {
                syms[w++] = rule.result;
                k += 2;
            } else {
                syms[w++] = syms[k++];
            }
        }
        syms.resize(w);
    }
    out.insert(out.end(), syms.begin(), syms.end());
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
    std::vector<TokenId> out;
    out.reserve(text.size() / 2 + 1);
    for (auto chunk : pretokenize(text)) encode_chunk(chunk, out);
    return out;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
    std::string out;
    for (auto id : ids) {
        const auto& raw = token_bytes(id);
        if (!is_special(id)) out += raw;
    }
    return out;
}

void Tokenizer::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json vocab = nlohmann::ordered_json::object();
    for (std::size_t id = 0; id < tokens_.size(); ++id) vocab[token_string(static_cast<TokenId>(id))] = id;
    io::write_file_atomic(dir / "vocab.json", vocab.dump() + "\n");

    std::string merges = "#version: 0.2\n";
    for (const auto& m : merges_) merges += token_string(m.left) + " " + token_string(m.right) + "\n";
    io::write_file_atomic(dir / "merges.txt", merges);
}

Tokenizer Tokenizer::load(const std::filesystem::path& dir) {
    nlohmann::json vocab;
    try {
        vocab = nlohmann::json::parse(io::read_file(dir / "vocab.json"));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("vocab.json: ") + e.what());
    }
    if (!vocab.is_object()) throw ParseError("vocab.json must be an object");

    Tokenizer tok;
    const std::size_t v = vocab.size();
    tok.tokens_.assign(v, {});
    std::vector<bool> seen(v, false);
    std::unordered_map<std::string, TokenId> by_string;
    for (const auto& [name, value] : vocab.items()) {
        if (!value.is_number_integer()) throw ParseError("non-integer id for token '" + name + "'");
        auto id = value.get<std::int64_t>();
        if (id < 0 || static_cast<std::size_t>(id) >= v || seen[static_cast<std::size_t>(id)])
            throw ParseError("ids in vocab.json are not a bijection onto 0..V-1");
        seen[static_cast<std::size_t>(id)] = true;
        by_string.emplace(name, static_cast<TokenId>(id));
        if (static_cast<std::size_t>(id) < Special::count) {
            if (name != Special::names[static_cast<std::size_t>(id)])
                throw ParseError("special token at id " + std::to_string(id) + " must be " +
                                 std::string(Special::names[static_cast<std::size_t>(id)]));
            tok.tokens_[static_cast<std::size_t>(id)] = name;
        } else {
            tok.tokens_[static_cast<std::size_t>(id)] = printable_to_bytes(name);
        }
    }
    if (v < kMinVocabSize) throw ParseError("vocabulary smaller than the byte alphabet");
    std::array<bool, 256> have{};
    for (std::size_t id = Special::count; id < v; ++id) {
        const auto& raw = tok.tokens_[id];
        if (raw.size() == 1) {
            auto b = static_cast<unsigned char>(raw[0]);
            tok.byte_ids_[b] = static_cast<TokenId>(id);
            have[b] = true;
        }
    }
    if (!std::all_of(have.begin(), have.end(), [](bool h) { return h; }))
        throw ParseError("vocabulary is missing single-byte tokens");

    for (const auto& line : io::read_lines(dir / "merges.txt")) {
        if (line.empty() || line.rfind("#version", 0) == 0) continue;
        auto space = line.find(' ');
        if (space == std::string::npos || line.find(' ', space + 1) != std::string::npos)
            throw ParseError("malformed merge line '" + line + "'");
        auto l = line.substr(0, space);
        auto r = line.substr(space + 1);
        auto li = by_string.find(l), ri = by_string.find(r), oi = by_string.find(l + r);
        if (li == by_string.end() || ri == by_string.end() || oi == by_string.end())
            throw ParseError("merge '" + line + "' references tokens missing from vocab.json");
        if (is_special(li->second) || is_special(ri->second) || is_special(oi->second))
            throw ParseError("merge '" + line + "' involves a special token");
        tok.merges_.push_back({li->second, ri->second, oi->second});
    }
    tok.build_indexes();
    return tok;
}

VocabOverlap vocab_intersection(const Tokenizer& a, const Tokenizer& b) {
    std::unordered_set<std::string> in_b;
    for (std::size_t id = Special::count; id < b.vocab_size(); ++id)
        in_b.insert(b.token_bytes(static_cast<TokenId>(id)));
    VocabOverlap r;
    for (std::size_t id = Special::count; id < a.vocab_size(); ++id) {
        if (in_b.count(a.token_bytes(static_cast<TokenId>(id)))) ++r.intersection;
        else ++r.unique_in_a;
    }
    return r;
}

}  // namespace ct::bpe
