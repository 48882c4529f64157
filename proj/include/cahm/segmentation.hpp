#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "cahm/errors.hpp"
#include "cahm/text.hpp"

namespace cahm {

// ---------------------------------------------------------------------------
// Token counting
// ---------------------------------------------------------------------------

enum class TokenScheme {
    whitespace_words, // maximal non-whitespace runs
    byte_approx,      // ceil(bytes / 4); no model dependency
    external_vocab,   // greedy longest-match against a word list file
};

struct TokenizerSpec {
    TokenScheme scheme = TokenScheme::byte_approx;
    std::string vocab_path; // external_vocab only

    bool operator==(const TokenizerSpec&) const = default;
};

inline std::string to_string(TokenScheme s) {
    switch (s) {
    case TokenScheme::whitespace_words: return "whitespace-words";
    case TokenScheme::byte_approx: return "byte-approx";
    case TokenScheme::external_vocab: return "external-vocab";
    }
    return "byte-approx";
}

inline TokenScheme token_scheme_from_string(std::string_view s) {
    if (s == "whitespace-words" || s == "whitespace") return TokenScheme::whitespace_words;
    if (s == "byte-approx" || s == "bytes") return TokenScheme::byte_approx;
    if (s == "external-vocab" || s == "vocab") return TokenScheme::external_vocab;
    throw ConfigError("unknown tokenizer scheme: " + std::string(s));
}

// Deterministic token counter. Counting is a pure function of (scheme, text);
// the external vocab is loaded once at construction.
class Tokenizer {
public:
    Tokenizer() : Tokenizer(TokenizerSpec{}) {}

    explicit Tokenizer(TokenizerSpec spec) : spec_(std::move(spec)) {
        if (spec_.scheme == TokenScheme::external_vocab) {
            if (spec_.vocab_path.empty())
                throw ConfigError("external-vocab tokenizer requires a vocab file path");
            std::ifstream in(spec_.vocab_path);
            if (!in)
                throw ConfigError("external-vocab file missing: " + spec_.vocab_path);
            std::string line;
            while (std::getline(in, line)) {
                if (!line.empty() && line.back() == '\r') line.pop_back();
                if (line.empty()) continue;
                max_entry_ = std::max(max_entry_, line.size());
                vocab_.insert(line);
            }
            if (vocab_.empty())
                throw ConfigError("external-vocab file is empty: " + spec_.vocab_path);
        }
    }

    const TokenizerSpec& spec() const { return spec_; }

    long count(std::string_view text) const {
        if (text.empty()) return 0;
        switch (spec_.scheme) {
        case TokenScheme::byte_approx:
            return static_cast<long>((text.size() + 3) / 4);
        case TokenScheme::whitespace_words: {
            long n = 0;
            bool in_word = false;
            for (char c : text) {
                if (is_space_byte(c)) {
                    in_word = false;
                } else if (!in_word) {
                    in_word = true;
                    ++n;
                }
            }
            return n;
        }
        case TokenScheme::external_vocab:
            return count_vocab(text, nullptr, 0);
        }
        return 0;
    }

    // Byte offset after consuming `budget` tokens from `text` (text.size()
    // when the whole text fits). Used by the chunker to find cut candidates.
    size_t offset_after_tokens(std::string_view text, long budget) const {
        if (budget <= 0) return 0;
        switch (spec_.scheme) {
        case TokenScheme::byte_approx: {
            size_t cap = static_cast<size_t>(budget) * 4;
            return std::min(text.size(), cap);
        }
        case TokenScheme::whitespace_words: {
            long seen = 0;
            size_t i = 0;
            const size_t n = text.size();
            while (i < n) {
                while (i < n && is_space_byte(text[i])) ++i;
                if (i >= n) return n;
                if (seen == budget) return i; // start of the (budget+1)-th word
                while (i < n && !is_space_byte(text[i])) ++i;
                ++seen;
            }
            return n;
        }
        case TokenScheme::external_vocab: {
            size_t off = 0;
            count_vocab(text, &off, budget);
            return off;
        }
        }
        return text.size();
    }

private:
    // Greedy longest match; unmatched input consumes one code point per token.
    long count_vocab(std::string_view text, size_t* stop_offset, long budget) const {
        long n = 0;
        size_t i = 0;
        while (i < text.size()) {
            if (stop_offset && n == budget) {
                *stop_offset = i;
                return n;
            }
            size_t best = 0;
            size_t try_len = std::min(max_entry_, text.size() - i);
            for (size_t len = try_len; len >= 1; --len) {
                if (vocab_.count(std::string(text.substr(i, len)))) {
                    best = len;
                    break;
                }
            }
            if (best == 0) {
                best = 1;
                while (i + best < text.size() && is_utf8_continuation(static_cast<unsigned char>(text[i + best])))
                    ++best;
            }
            i += best;
            ++n;
        }
        if (stop_offset) *stop_offset = text.size();
        return n;
    }

    TokenizerSpec spec_;
    std::unordered_set<std::string> vocab_;
    size_t max_entry_ = 0;
};

inline long count_tokens(std::string_view text, const TokenizerSpec& spec) {
    return Tokenizer(spec).count(text);
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct Document {
    std::string id;
    std::string text; // UTF-8, non-empty for any pipeline run
    std::optional<std::string> reference_summary;
    std::optional<std::string> domain_tag;
};

struct Chunk {
    std::string doc_id;
    int index = 0;
    std::string text;
    long token_count = 0;
    size_t begin = 0, end = 0; // byte span in the document
};

struct SourceSpan {
    std::string doc_id;
    size_t begin = 0, end = 0;

    bool operator==(const SourceSpan&) const = default;
    bool operator<(const SourceSpan& o) const {
        return std::tie(doc_id, begin, end) < std::tie(o.doc_id, o.begin, o.end);
    }
};

struct Passage {
    int label = 0; // 1..m within its labeling scope
    std::string text;
    long token_count = 0;
    SourceSpan origin;
};

// ---------------------------------------------------------------------------
// Sentence splitting
// ---------------------------------------------------------------------------

namespace detail {

// Tokens whose trailing '.' does not end a sentence. Checked case-sensitively
// against the word (letters and internal dots) preceding the period.
inline const std::set<std::string>& abbreviation_stoplist() {
    static const std::set<std::string> list = {
        "Mr", "Mrs", "Ms", "Dr", "Prof", "Rev", "Hon", "Gen", "Sen", "Rep",
        "Gov", "Capt", "Col", "Sgt", "Lt", "Maj", "Adm", "St", "Mt", "Ft",
        "Jr", "Sr", "Messrs", "Mme", "Mlle", "vs", "etc", "e.g", "i.e", "cf",
        "al", "Co", "Corp", "Inc", "Ltd", "Univ", "Ave", "Blvd", "Rd", "Dept",
        "Est", "Fig", "Figs", "Eq", "Vol", "Ch", "Sec", "pp", "approx",
    };
    return list;
}

inline bool is_terminal_punct(char c) { return c == '.' || c == '!' || c == '?'; }
inline bool is_closing_quote(char c) { return c == '"' || c == '\'' || c == ')' || c == ']'; }

inline bool is_sentence_opener(std::string_view s, size_t i) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    if (c >= 'A' && c <= 'Z') return true;
    if (c == '"' || c == '\'') return true;
    // U+201C / U+2018 opening quotes
    if (c == 0xE2 && i + 2 < s.size() && static_cast<unsigned char>(s[i + 1]) == 0x80) {
        unsigned char t = static_cast<unsigned char>(s[i + 2]);
        return t == 0x9C || t == 0x98;
    }
    return false;
}

inline bool ends_with_abbreviation(std::string_view s, size_t dot) {
    // word = maximal [A-Za-z.] run ending right before `dot`, internal dots kept
    size_t b = dot;
    while (b > 0) {
        unsigned char c = static_cast<unsigned char>(s[b - 1]);
        if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '.') --b;
        else break;
    }
    if (b == dot) return false;
    std::string word(s.substr(b, dot - b));
    while (!word.empty() && word.front() == '.') word.erase(word.begin());
    return abbreviation_stoplist().count(word) > 0;
}

} // namespace detail

// Byte positions where a new sentence starts (strictly inside the text).
// Rule: terminal punctuation (., !, ?) + optional closing quotes/brackets +
// whitespace + uppercase letter or opening quote, with an abbreviation
// stop-list guarding the period.
inline std::vector<size_t> sentence_starts(std::string_view text) {
    std::vector<size_t> out;
    const size_t n = text.size();
    for (size_t i = 0; i < n; ++i) {
        if (!detail::is_terminal_punct(text[i])) continue;
        if (text[i] == '.' && detail::ends_with_abbreviation(text, i)) continue;
        size_t j = i + 1;
        while (j < n && detail::is_closing_quote(text[j])) ++j;
        size_t ws = j;
        while (j < n && is_space_byte(text[j])) ++j;
        if (j == ws || j >= n) continue; // need at least one whitespace byte
        if (detail::is_sentence_opener(text, j)) out.push_back(j);
    }
    return out;
}

// Trimmed [begin, end) spans, one per sentence, in order.
inline std::vector<std::pair<size_t, size_t>> sentence_spans(std::string_view text) {
    std::vector<std::pair<size_t, size_t>> out;
    size_t prev = 0;
    auto emit = [&](size_t b, size_t e) {
        while (b < e && is_space_byte(text[b])) ++b;
        while (e > b && is_space_byte(text[e - 1])) --e;
        if (e > b) out.emplace_back(b, e);
    };
    for (size_t start : sentence_starts(text)) {
        emit(prev, start);
        prev = start;
    }
    emit(prev, text.size());
    return out;
}

inline std::vector<std::string> split_sentences(std::string_view text) {
    std::vector<std::string> out;
    for (auto [b, e] : sentence_spans(text)) out.emplace_back(text.substr(b, e - b));
    return out;
}

// ---------------------------------------------------------------------------
// Chunking and passage splitting
// ---------------------------------------------------------------------------

namespace detail {

// Largest cut q in (start, cap] with whitespace immediately before q, i.e.
// trailing whitespace stays with the left piece. 0 when none exists.
inline size_t last_word_start(std::string_view text, size_t start, size_t cap) {
    for (size_t q = cap; q > start + 1; --q) {
        if (is_space_byte(text[q - 1]) && !is_space_byte(text[q])) return q;
    }
    return 0;
}

inline size_t utf8_floor(std::string_view text, size_t pos) {
    while (pos > 0 && is_utf8_continuation(static_cast<unsigned char>(text[pos]))) --pos;
    return pos;
}

} // namespace detail

// Splits a document into a partition of its text: concatenating chunk texts
// in index order reproduces the input byte-for-byte. Cuts prefer sentence
// starts, then word starts, then a UTF-8-safe hard cut.
inline std::vector<Chunk> chunk_document(const Document& doc, long limit, const Tokenizer& tok) {
    if (doc.text.empty()) throw ConfigError("chunk_document: empty document " + doc.id);
    if (limit < 64) throw ConfigError("chunk_document: limit must be >= 64 tokens");

    std::string_view text = doc.text;
    std::vector<size_t> starts = sentence_starts(text);

    std::vector<Chunk> chunks;
    size_t pos = 0;
    while (pos < text.size()) {
        std::string_view rest = text.substr(pos);
        size_t cap = pos + tok.offset_after_tokens(rest, limit);
        size_t cut;
        if (cap >= text.size()) {
            cut = text.size();
        } else {
            // latest sentence start in (pos, cap]
            auto it = std::upper_bound(starts.begin(), starts.end(), cap);
            cut = 0;
            if (it != starts.begin() && *(it - 1) > pos) cut = *(it - 1);
            if (cut == 0) cut = detail::last_word_start(text, pos, cap);
            if (cut == 0) cut = detail::utf8_floor(text, cap);
            if (cut <= pos) cut = std::min(text.size(), pos + 4); // forced progress on degenerate input
        }
        Chunk c;
        c.doc_id = doc.id;
        c.index = static_cast<int>(chunks.size());
        c.begin = pos;
        c.end = cut;
        c.text = std::string(text.substr(pos, cut - pos));
        c.token_count = tok.count(c.text);
        chunks.push_back(std::move(c));
        pos = cut;
    }
    return chunks;
}

// Partition of `text` into consecutive passages of `passage_tokens` tokens
// each (the final one may be shorter), labeled 1..m. Offsets in the returned
// origins are absolute: base_offset + position within `text`.
inline std::vector<Passage> split_passages(std::string_view text, long passage_tokens, const Tokenizer& tok,
                                           const std::string& doc_id = "", size_t base_offset = 0) {
    if (passage_tokens < 10) throw ConfigError("split_passages: passage_tokens must be >= 10");
    std::vector<Passage> out;
    if (text.empty()) return out;

    size_t pos = 0;
    while (pos < text.size()) {
        std::string_view rest = text.substr(pos);
        size_t cap = pos + tok.offset_after_tokens(rest, passage_tokens);
        size_t cut;
        if (cap >= text.size()) {
            cut = text.size();
        } else if (tok.spec().scheme == TokenScheme::byte_approx) {
            // keep the slice within one token of the target: back off to a
            // word start only when it costs at most 7 bytes
            size_t q = detail::last_word_start(text, pos, cap);
            cut = (q != 0 && cap - q <= 7) ? q : detail::utf8_floor(text, cap);
            if (cut <= pos) cut = cap;
        } else {
            cut = cap;
        }
        // a whitespace-only tail carries no tokens; fold it into the last slice
        if (!out.empty() && tok.count(text.substr(pos, cut - pos)) == 0) {
            out.back().text += std::string(text.substr(pos, cut - pos));
            out.back().origin.end = base_offset + cut;
            out.back().token_count = tok.count(out.back().text);
            pos = cut;
            continue;
        }
        Passage p;
        p.label = static_cast<int>(out.size()) + 1;
        p.text = std::string(text.substr(pos, cut - pos));
        p.token_count = tok.count(p.text);
        p.origin = SourceSpan{doc_id, base_offset + pos, base_offset + cut};
        out.push_back(std::move(p));
        pos = cut;
    }
    return out;
}

// Longest prefix of `text` within `budget` tokens, cut at a sentence or word
// start where possible.
inline std::string truncate_to_tokens(std::string_view text, long budget, const Tokenizer& tok) {
    if (budget <= 0) return "";
    if (tok.count(text) <= budget) return std::string(text);
    size_t cap = tok.offset_after_tokens(text, budget);
    if (cap >= text.size()) return std::string(text);

    size_t cut = 0;
    std::vector<size_t> starts = sentence_starts(text);
    auto it = std::upper_bound(starts.begin(), starts.end(), cap);
    if (it != starts.begin()) cut = *(it - 1);
    if (cut == 0) cut = detail::last_word_start(text, 0, cap);
    if (cut == 0) cut = detail::utf8_floor(text, cap);
    if (cut == 0) { // budget smaller than the first code point; keep it whole
        cut = 1;
        while (cut < text.size() && is_utf8_continuation(static_cast<unsigned char>(text[cut]))) ++cut;
    }
    return std::string(text.substr(0, cut));
}

} // namespace cahm
