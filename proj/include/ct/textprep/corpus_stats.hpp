#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

namespace ct::textprep {

struct CorpusStats {
    std::uint64_t token_count = 0;
    std::uint64_t sentence_count = 0;
    std::uint64_t unique_token_count = 0;

    nlohmann::json to_json() const;
    bool operator==(const CorpusStats&) const = default;
};

// Sentences end at `.`, `!` or `?` followed by whitespace or end of text.
std::uint64_t count_sentences(std::string_view text);

// Mergeable partial statistics; merge() is associative and commutative.
class StatsAccumulator {
public:
    void add(std::string_view clean_tweet);
    void merge(const StatsAccumulator& other);
    CorpusStats finish() const;

private:
    std::uint64_t tokens_ = 0;
    std::uint64_t sentences_ = 0;
    std::unordered_set<std::string> vocab_;
};

// Shards the corpus across worker_count() threads.
CorpusStats corpus_stats(const std::vector<std::string>& corpus);

}  // namespace ct::textprep
