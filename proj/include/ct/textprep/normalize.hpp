#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace ct::textprep {

// Tweet normalization. Rules run in this order on every pass:
//   1. decode HTML entities (named HTML5 references and numeric forms)
//   2. replace URLs (http://, https://, www. up to whitespace) with HTTPURL
//   3. replace @-mentions (1..15 word characters) with @USER
//   4. replace emoji with :short_name: from the bundled table; drop unknown emoji
//   5. turn every whitespace run into one space, trim both ends
//   6. NFC-normalize and strip control characters
// Passes repeat until the text stops changing, so the result is a fixed point.
//
// Input bytes that are not valid UTF-8 are repaired first: CESU-style
// surrogate sequences are dropped and other stray bytes are read as
// Windows-1252. Bytes undefined in Windows-1252 throw IrreparableEncoding.
std::string preprocess_tweet(std::string_view raw);

inline constexpr std::string_view kUrlToken = "HTTPURL";
inline constexpr std::string_view kUserToken = "@USER";

// Individual stages, exposed for testing and for callers that want a subset.
std::string repair_utf8(std::string_view bytes);
std::string decode_html_entities(std::string_view text);
std::string replace_urls(std::string_view text);
std::string replace_mentions(std::string_view text);
std::string textualize_emoji(std::string_view text);
std::string collapse_whitespace(std::string_view text);
std::string fix_encoding(std::string_view text);

std::vector<std::string_view> split_tokens(std::string_view text);
std::size_t count_tokens(std::string_view text);

// True iff the whitespace-token count is strictly greater than min_tokens.
bool passes_length_filter(std::string_view clean, std::size_t min_tokens = 10);

}  // namespace ct::textprep
