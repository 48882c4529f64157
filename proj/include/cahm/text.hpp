#pragma once

#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace cahm {

inline bool is_utf8_continuation(unsigned char b) {
    return (b & 0xC0) == 0x80;
}

// Structural UTF-8 validation (sequence lengths and continuation bytes;
// rejects overlongs via range checks on the first byte).
inline bool utf8_valid(std::string_view s) {
    size_t i = 0;
    const size_t n = s.size();
    while (i < n) {
        unsigned char c = static_cast<unsigned char>(s[i]);
        size_t len;
        if (c < 0x80) {
            len = 1;
        } else if ((c & 0xE0) == 0xC0) {
            if (c < 0xC2) return false;
            len = 2;
        } else if ((c & 0xF0) == 0xE0) {
            len = 3;
        } else if ((c & 0xF8) == 0xF0) {
            if (c > 0xF4) return false;
            len = 4;
        } else {
            return false;
        }
        if (i + len > n) return false;
        for (size_t j = 1; j < len; ++j) {
            if (!is_utf8_continuation(static_cast<unsigned char>(s[i + j]))) return false;
        }
        i += len;
    }
    return true;
}

inline bool is_space_byte(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline std::string_view trim(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && is_space_byte(s[b])) ++b;
    while (e > b && is_space_byte(s[e - 1])) --e;
    return s.substr(b, e - b);
}

// Maximal non-whitespace runs.
inline std::vector<std::string_view> word_tokens(std::string_view s) {
    std::vector<std::string_view> out;
    size_t i = 0;
    const size_t n = s.size();
    while (i < n) {
        while (i < n && is_space_byte(s[i])) ++i;
        size_t b = i;
        while (i < n && !is_space_byte(s[i])) ++i;
        if (i > b) out.push_back(s.substr(b, i - b));
    }
    return out;
}

// Lowercased, ASCII-punctuation-stripped whitespace tokens. Shared by the
// retrieval scorer, the extractive scorer, and the overlap metrics so that
// all three agree on what a "term" is. Tokens that are punctuation-only
// vanish.
inline std::vector<std::string> term_tokens(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    };
    for (char ch : s) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (is_space_byte(ch)) {
            flush();
        } else if (c < 0x80 && std::ispunct(c)) {
            continue;
        } else if (c < 0x80) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else {
            cur.push_back(ch);
        }
    }
    flush();
    return out;
}

// FNV-1a; used for deterministic seeding and n-gram keys.
inline uint64_t fnv1a64(std::string_view s, uint64_t h = 14695981039346656037ull) {
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace cahm
