#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cahm/segmentation.hpp"
#include "cahm/text.hpp"

namespace cahm {

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;

    bool operator==(const Bm25Params&) const = default;
};

// Okapi variant with a strictly positive idf: ln(1 + (N - n + 0.5) / (n + 0.5)).
inline double bm25_idf(long num_docs, long docs_with_term) {
    return std::log(1.0 + (static_cast<double>(num_docs) - docs_with_term + 0.5) /
                              (docs_with_term + 0.5));
}

// Contribution of one term with frequency tf in a document of dl terms.
inline double bm25_term_score(double idf, long tf, long dl, double avgdl, const Bm25Params& p = {}) {
    if (tf <= 0) return 0.0;
    double denom = tf + p.k1 * (1.0 - p.b + p.b * (avgdl > 0 ? dl / avgdl : 0.0));
    return idf * (tf * (p.k1 + 1.0)) / denom;
}

struct ScoredPassage {
    int label = 0; // into the scored passage list, 1-based
    double score = 0.0;
};

// Scores every passage against the query. Tokens come from term_tokens
// (lowercased, punctuation stripped); repeated query tokens contribute once
// per occurrence. Result is sorted by score descending, ties by label.
inline std::vector<ScoredPassage> bm25_rank(std::string_view query, const std::vector<Passage>& passages,
                                            const Bm25Params& params = {}) {
    const long n_docs = static_cast<long>(passages.size());
    std::vector<std::map<std::string, long>> tf(passages.size());
    std::vector<long> dl(passages.size(), 0);
    double total_len = 0.0;
    for (size_t i = 0; i < passages.size(); ++i) {
        for (auto& t : term_tokens(passages[i].text)) ++tf[i][t];
        for (auto& [_, c] : tf[i]) dl[i] += c;
        total_len += static_cast<double>(dl[i]);
    }
    const double avgdl = n_docs > 0 ? total_len / n_docs : 0.0;

    std::map<std::string, long> df;
    for (auto& m : tf)
        for (auto& [t, _] : m) ++df[t];

    std::vector<ScoredPassage> out(passages.size());
    for (size_t i = 0; i < passages.size(); ++i)
        out[i].label = static_cast<int>(i) + 1;

    for (auto& q : term_tokens(query)) {
        auto it = df.find(q);
        if (it == df.end()) continue;
        double idf = bm25_idf(n_docs, it->second);
        for (size_t i = 0; i < passages.size(); ++i) {
            auto f = tf[i].find(q);
            if (f == tf[i].end()) continue;
            out[i].score += bm25_term_score(idf, f->second, dl[i], avgdl, params);
        }
    }

    std::stable_sort(out.begin(), out.end(), [](const ScoredPassage& a, const ScoredPassage& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.label < b.label;
    });
    return out;
}

} // namespace cahm
