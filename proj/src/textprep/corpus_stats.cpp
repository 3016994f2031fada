#include "ct/textprep/corpus_stats.hpp"

#include "ct/common/parallel.hpp"
#include "ct/textprep/normalize.hpp"

namespace ct::textprep {

nlohmann::json CorpusStats::to_json() const {
    return {{"tokens", token_count}, {"sentences", sentence_count}, {"unique_tokens", unique_token_count}};
}

std::uint64_t count_sentences(std::string_view text) {
    auto is_ws = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
    std::uint64_t n = 0;
    bool has_content = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (!is_ws(c)) has_content = true;
        bool terminal = c == '.' || c == '!' || c == '?';
        if (terminal && (i + 1 == text.size() || is_ws(text[i + 1]))) {
            if (has_content) ++n;
            has_content = false;
        }
    }
    if (has_content) ++n;
    return n;
}

void StatsAccumulator::add(std::string_view clean_tweet) {
    for (auto tok : split_tokens(clean_tweet)) {
        ++tokens_;
        vocab_.emplace(tok);
    }
    sentences_ += count_sentences(clean_tweet);
}

void StatsAccumulator::merge(const StatsAccumulator& other) {
    tokens_ += other.tokens_;
    sentences_ += other.sentences_;
    vocab_.insert(other.vocab_.begin(), other.vocab_.end());
}

CorpusStats StatsAccumulator::finish() const {
    return {tokens_, sentences_, static_cast<std::uint64_t>(vocab_.size())};
}

CorpusStats corpus_stats(const std::vector<std::string>& corpus) {
    auto shards = std::min<std::size_t>(worker_count(), std::max<std::size_t>(1, corpus.size() / 4096));
    std::vector<StatsAccumulator> parts(shards);
    parallel_shards(corpus.size(), shards, [&](std::size_t s, std::size_t begin, std::size_t end) {
        for (auto i = begin; i < end; ++i) parts[s].add(corpus[i]);
    });
    StatsAccumulator total;
    for (const auto& p : parts) total.merge(p);
    return total.finish();
}

}  // namespace ct::textprep
