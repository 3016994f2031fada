#include "ct/textprep/normalize.hpp"

#include <array>
#include <unordered_map>
#include <unordered_set>

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "ct/common/errors.hpp"
#include "ct/common/utf8.hpp"

namespace ct::textprep {
namespace {

struct Entry {
    const char* key;
    const char* value;
};

constexpr Entry kHtmlEntities[] = {
#include "html_entities.inc"
};

constexpr Entry kEmojiTable[] = {
#include "emoji_table.inc"
};

const std::unordered_map<std::string_view, std::string_view>& entity_map() {
    static const auto map = [] {
        std::unordered_map<std::string_view, std::string_view> m;
        for (const auto& e : kHtmlEntities) m.emplace(e.key, e.value);
        return m;
    }();
    return map;
}

struct EmojiIndex {
    std::unordered_map<std::string_view, std::string_view> names;
    std::unordered_set<char32_t> first_codepoints;
    std::size_t max_codepoints = 0;
};

const EmojiIndex& emoji_index() {
    static const auto index = [] {
        EmojiIndex idx;
        for (const auto& e : kEmojiTable) {
            std::string_view seq(e.key);
            idx.names.emplace(seq, e.value);
            idx.first_codepoints.insert(utf8::decode_at(seq, 0).cp);
            std::size_t n = 0;
            for (std::size_t i = 0; i < seq.size(); i += utf8::decode_at(seq, i).len) ++n;
            idx.max_codepoints = std::max(idx.max_codepoints, n);
        }
        return idx;
    }();
    return index;
}

// Windows-1252 code points for bytes 0x80..0x9F; 0 marks undefined bytes.
constexpr std::array<char32_t, 32> kCp1252High = {
    0x20AC, 0,      0x201A, 0x0192, 0x201E, 0x2026, 0x2020, 0x2021,
    0x02C6, 0x2030, 0x0160, 0x2039, 0x0152, 0,      0x017D, 0,
    0,      0x2018, 0x2019, 0x201C, 0x201D, 0x2022, 0x2013, 0x2014,
    0x02DC, 0x2122, 0x0161, 0x203A, 0x0153, 0,      0x017E, 0x0178};

bool is_word_byte(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

bool is_alnum_byte(char c) { return is_word_byte(c) && c != '_'; }

bool is_space_cp(char32_t cp) { return u_isUWhiteSpace(static_cast<UChar32>(cp)) != 0; }

bool is_emoji_residue(char32_t cp) {
    if (cp == 0xFE0F || cp == 0xFE0E || cp == 0x200D || cp == 0x20E3) return true;
    if (cp >= 0x1F3FB && cp <= 0x1F3FF) return true;  // skin tones
    if (cp >= 0x1F1E6 && cp <= 0x1F1FF) return true;  // regional indicators
    if (cp >= 0xE0020 && cp <= 0xE007F) return true;  // tag sequences
    return u_hasBinaryProperty(static_cast<UChar32>(cp), UCHAR_EXTENDED_PICTOGRAPHIC) != 0;
}

bool starts_with_ci(std::string_view text, std::size_t pos, std::string_view prefix) {
    if (text.size() - pos < prefix.size()) return false;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        char c = text[pos + i];
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
        if (c != prefix[i]) return false;
    }
    return true;
}

std::string run_pass(std::string_view text) {
    auto s = decode_html_entities(text);
    s = replace_urls(s);
    s = replace_mentions(s);
    s = textualize_emoji(s);
    s = collapse_whitespace(s);
    return fix_encoding(s);
}

}  // namespace

std::string repair_utf8(std::string_view bytes) {
    std::string out;
    out.reserve(bytes.size());
    for (std::size_t i = 0; i < bytes.size();) {
        auto n = utf8::valid_sequence_length(bytes, i);
        if (n > 0) {
            out.append(bytes.substr(i, n));
            i += n;
            continue;
        }
        auto b = static_cast<unsigned char>(bytes[i]);
        // CESU-8 / WTF-8 surrogate halves are dropped whole.
        if (b == 0xED && i + 2 < bytes.size()) {
            auto b1 = static_cast<unsigned char>(bytes[i + 1]);
            auto b2 = static_cast<unsigned char>(bytes[i + 2]);
            if (b1 >= 0xA0 && b1 <= 0xBF && (b2 & 0xC0) == 0x80) {
                i += 3;
                continue;
            }
        }
        char32_t cp = b;
        if (b >= 0x80 && b <= 0x9F) {
            cp = kCp1252High[b - 0x80];
            if (cp == 0)
                throw IrreparableEncoding("byte 0x" + std::to_string(b) + " at offset " +
                                          std::to_string(i) + " has no Windows-1252 mapping");
        }
        utf8::append(out, cp);
        ++i;
    }
    return out;
}

std::string decode_html_entities(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    const auto& names = entity_map();
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] != '&') {
            out += text[i++];
            continue;
        }
        auto semi = text.find(';', i + 1);
        if (semi == std::string_view::npos || semi - i > 40) {
            out += text[i++];
            continue;
        }
        auto body = text.substr(i + 1, semi - i - 1);
        bool decoded = false;
        if (body.size() >= 2 && body[0] == '#') {
            bool hex = body[1] == 'x' || body[1] == 'X';
            auto digits = body.substr(hex ? 2 : 1);
            bool ok = !digits.empty() && digits.size() <= 8;
            std::uint32_t value = 0;
            for (char c : digits) {
                if (!ok) break;
                int d = -1;
                if (c >= '0' && c <= '9') d = c - '0';
                else if (hex && c >= 'a' && c <= 'f') d = c - 'a' + 10;
                else if (hex && c >= 'A' && c <= 'F') d = c - 'A' + 10;
                if (d < 0) ok = false;
                else value = value * (hex ? 16u : 10u) + static_cast<std::uint32_t>(d);
            }
            if (ok) {
                bool valid = value != 0 && value <= 0x10FFFF && !(value >= 0xD800 && value <= 0xDFFF);
                utf8::append(out, valid ? static_cast<char32_t>(value) : U'�');
                decoded = true;
            }
        } else if (!body.empty()) {
            auto it = names.find(body);
            if (it != names.end()) {
                out += it->second;
                decoded = true;
            }
        }
        if (decoded) {
            i = semi + 1;
        } else {
            out += text[i++];
        }
    }
    return out;
}

std::string replace_urls(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        bool boundary = i == 0 || !is_alnum_byte(text[i - 1]);
        bool url = boundary && (starts_with_ci(text, i, "http://") || starts_with_ci(text, i, "https://") ||
                                starts_with_ci(text, i, "www."));
        if (!url) {
            out += text[i++];
            continue;
        }
        while (i < text.size()) {
            auto d = utf8::decode_at(text, i);
            if (is_space_cp(d.cp)) break;
            i += d.len;
        }
        out += kUrlToken;
    }
    return out;
}

std::string replace_mentions(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] == '@' && (i == 0 || !is_word_byte(text[i - 1]))) {
            std::size_t j = i + 1;
            while (j < text.size() && is_word_byte(text[j])) ++j;
            std::size_t n = j - i - 1;
            if (n >= 1 && n <= 15) {
                out += kUserToken;
                i = j;
                continue;
            }
            // Over-long handles are not mentions; keep the whole run.
            out.append(text.substr(i, j - i));
            i = j;
            continue;
        }
        out += text[i++];
    }
    return out;
}

std::string textualize_emoji(std::string_view text) {
    const auto& idx = emoji_index();
    std::string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        auto d = utf8::decode_at(text, i);
        if (d.cp < 0x80 && d.cp != '#' && d.cp != '*' && !(d.cp >= '0' && d.cp <= '9')) {
            out += static_cast<char>(d.cp);
            ++i;
            continue;
        }
        if (idx.first_codepoints.count(d.cp)) {
            // Longest match over up to max_codepoints code points.
            std::array<std::size_t, 16> ends{};
            std::size_t count = 0;
            for (std::size_t j = i; j < text.size() && count < idx.max_codepoints && count < ends.size();) {
                j += utf8::decode_at(text, j).len;
                ends[count++] = j;
            }
            bool matched = false;
            for (std::size_t k = count; k > 0; --k) {
                auto it = idx.names.find(text.substr(i, ends[k - 1] - i));
                if (it != idx.names.end()) {
                    out += it->second;
                    i = ends[k - 1];
                    matched = true;
                    break;
                }
            }
            if (matched) continue;
        }
        if (!is_emoji_residue(d.cp)) out.append(text.substr(i, d.len));
        i += d.len;
    }
    return out;
}

std::string collapse_whitespace(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (std::size_t i = 0; i < text.size();) {
        auto d = utf8::decode_at(text, i);
        if (is_space_cp(d.cp)) {
            pending_space = !out.empty();
        } else {
            if (pending_space) out += ' ';
            pending_space = false;
            out.append(text.substr(i, d.len));
        }
        i += d.len;
    }
    return out;
}

std::string fix_encoding(std::string_view text) {
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
    if (U_FAILURE(status)) throw IrreparableEncoding(std::string("ICU NFC unavailable: ") + u_errorName(status));
    auto src = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
    icu::UnicodeString normalized = nfc->normalize(src, status);
    if (U_FAILURE(status)) throw IrreparableEncoding(std::string("NFC failed: ") + u_errorName(status));
    std::string nfc_utf8;
    normalized.toUTF8String(nfc_utf8);

    std::string out;
    out.reserve(nfc_utf8.size());
    for (std::size_t i = 0; i < nfc_utf8.size();) {
        auto d = utf8::decode_at(nfc_utf8, i);
        auto type = u_charType(static_cast<UChar32>(d.cp));
        bool drop = (type == U_CONTROL_CHAR && d.cp != ' ') || type == U_SURROGATE || d.cp == 0xFFFE ||
                    d.cp == 0xFFFF;
        if (!drop) out.append(nfc_utf8, i, d.len);
        i += d.len;
    }
    return out;
}

std::string preprocess_tweet(std::string_view raw) {
    std::string current = repair_utf8(raw);
    for (int pass = 0; pass < 16; ++pass) {
        std::string next = run_pass(current);
        if (next == current) break;
        current = std::move(next);
    }
    return current;
}

std::vector<std::string_view> split_tokens(std::string_view text) {
    std::vector<std::string_view> tokens;
    std::size_t start = std::string_view::npos;
    for (std::size_t i = 0; i < text.size();) {
        auto d = utf8::decode_at(text, i);
        if (is_space_cp(d.cp)) {
            if (start != std::string_view::npos) tokens.push_back(text.substr(start, i - start));
            start = std::string_view::npos;
        } else if (start == std::string_view::npos) {
            start = i;
        }
        i += d.len;
    }
    if (start != std::string_view::npos) tokens.push_back(text.substr(start));
    return tokens;
}

std::size_t count_tokens(std::string_view text) {
    std::size_t n = 0;
    bool in_token = false;
    for (std::size_t i = 0; i < text.size();) {
        auto d = utf8::decode_at(text, i);
        bool space = is_space_cp(d.cp);
        if (!space && !in_token) ++n;
        in_token = !space;
        i += d.len;
    }
    return n;
}

bool passes_length_filter(std::string_view clean, std::size_t min_tokens) {
    return count_tokens(clean) > min_tokens;
}

}  // namespace ct::textprep
