#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <string_view>

namespace ct::utf8 {

struct Decoded {
    char32_t cp;
    std::size_t len;
};

// Decodes the code point at `pos`. Meaningful only for valid UTF-8, but never
// reads past the end of `s`.
inline Decoded decode_at(std::string_view s, std::size_t pos) {
    auto b = static_cast<unsigned char>(s[pos]);
    if (b < 0x80) return {b, 1};
    auto cont = [&](std::size_t k) {
        return pos + k < s.size() ? static_cast<unsigned char>(s[pos + k]) & 0x3Fu : 0u;
    };
    auto clamp = [&](std::size_t n) { return std::min(n, s.size() - pos); };
    if ((b & 0xE0) == 0xC0) return {static_cast<char32_t>(((b & 0x1Fu) << 6) | cont(1)), clamp(2)};
    if ((b & 0xF0) == 0xE0)
        return {static_cast<char32_t>(((b & 0x0Fu) << 12) | (cont(1) << 6) | cont(2)), clamp(3)};
    return {static_cast<char32_t>(((b & 0x07u) << 18) | (cont(1) << 12) | (cont(2) << 6) | cont(3)), clamp(4)};
}

inline void append(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xF0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

// Length of the well-formed sequence starting at `pos`, 0 if ill-formed.
inline std::size_t valid_sequence_length(std::string_view s, std::size_t pos) {
    auto at = [&](std::size_t k) -> unsigned {
        return pos + k < s.size() ? static_cast<unsigned char>(s[pos + k]) : 0u;
    };
    unsigned b0 = at(0);
    auto is_cont = [](unsigned b) { return (b & 0xC0u) == 0x80u; };
    if (b0 < 0x80) return 1;
    if (b0 >= 0xC2 && b0 <= 0xDF) return is_cont(at(1)) ? 2 : 0;
    if (b0 >= 0xE0 && b0 <= 0xEF) {
        unsigned b1 = at(1);
        if (b0 == 0xE0 && b1 < 0xA0) return 0;
        if (b0 == 0xED && b1 >= 0xA0) return 0;  // surrogates
        return is_cont(b1) && is_cont(at(2)) ? 3 : 0;
    }
    if (b0 >= 0xF0 && b0 <= 0xF4) {
        unsigned b1 = at(1);
        if (b0 == 0xF0 && b1 < 0x90) return 0;
        if (b0 == 0xF4 && b1 >= 0x90) return 0;
        return is_cont(b1) && is_cont(at(2)) && is_cont(at(3)) ? 4 : 0;
    }
    return 0;
}

inline bool is_valid(std::string_view s) {
    for (std::size_t i = 0; i < s.size();) {
        auto n = valid_sequence_length(s, i);
        if (n == 0) return false;
        i += n;
    }
    return true;
}

}  // namespace ct::utf8
