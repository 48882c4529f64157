#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cahm/errors.hpp"
#include "cahm/text.hpp"

namespace cahm {

struct RougeScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct RougeReport {
    RougeScore r1, r2, rl;
    double geometric_mean_f1 = 0.0;
};

namespace detail {

inline RougeScore prf(double match, double cand_total, double ref_total) {
    RougeScore s;
    if (cand_total > 0) s.precision = match / cand_total;
    if (ref_total > 0) s.recall = match / ref_total;
    if (s.precision + s.recall > 0) s.f1 = 2 * s.precision * s.recall / (s.precision + s.recall);
    return s;
}

inline RougeScore ngram_overlap(const std::vector<std::string>& cand, const std::vector<std::string>& ref,
                                size_t n) {
    auto grams = [n](const std::vector<std::string>& tokens) {
        std::map<std::string, long> counts;
        if (tokens.size() >= n) {
            for (size_t i = 0; i + n <= tokens.size(); ++i) {
                std::string key = tokens[i];
                for (size_t k = 1; k < n; ++k) {
                    key += '\x1f';
                    key += tokens[i + k];
                }
                ++counts[key];
            }
        }
        return counts;
    };
    auto cg = grams(cand);
    auto rg = grams(ref);
    long match = 0, cand_total = 0, ref_total = 0;
    for (const auto& [_, c] : cg) cand_total += c;
    for (const auto& [_, c] : rg) ref_total += c;
    for (const auto& [g, c] : cg) {
        auto it = rg.find(g);
        if (it != rg.end()) match += std::min(c, it->second);
    }
    return prf(static_cast<double>(match), static_cast<double>(cand_total), static_cast<double>(ref_total));
}

inline long lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<long> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (size_t i = 1; i <= a.size(); ++i) {
        for (size_t j = 1; j <= b.size(); ++j) {
            if (a[i - 1] == b[j - 1]) cur[j] = prev[j - 1] + 1;
            else cur[j] = std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

} // namespace detail

// ROUGE-1/2 clipped n-gram overlap and LCS-based ROUGE-L over lowercased,
// punctuation-stripped word tokens. No stemming.
inline RougeReport rouge(std::string_view candidate, std::string_view reference) {
    if (candidate.empty() || reference.empty())
        throw Error("rouge: candidate and reference must be non-empty");
    auto cand = term_tokens(candidate);
    auto ref = term_tokens(reference);

    RougeReport rep;
    rep.r1 = detail::ngram_overlap(cand, ref, 1);
    rep.r2 = detail::ngram_overlap(cand, ref, 2);
    rep.rl = detail::prf(static_cast<double>(detail::lcs_length(cand, ref)),
                         static_cast<double>(cand.size()), static_cast<double>(ref.size()));
    if (rep.r1.f1 > 0 && rep.r2.f1 > 0 && rep.rl.f1 > 0)
        rep.geometric_mean_f1 = std::cbrt(rep.r1.f1 * rep.r2.f1 * rep.rl.f1);
    return rep;
}

inline void to_json(nlohmann::json& j, const RougeScore& s) {
    j = {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
}

inline void to_json(nlohmann::json& j, const RougeReport& r) {
    j = {{"r1", r.r1}, {"r2", r.r2}, {"rl", r.rl}, {"geometric_mean_f1", r.geometric_mean_f1}};
}

// One row of the JSONL handed to external neural scorers.
struct ExportRow {
    std::string id;
    std::string source;
    std::string candidate;
    std::optional<std::string> reference;
};

inline nlohmann::json export_row_json(const ExportRow& row) {
    nlohmann::json j = {{"id", row.id}, {"source", row.source}, {"candidate", row.candidate}, {"reference", nullptr}};
    if (row.reference) j["reference"] = *row.reference;
    return j;
}

} // namespace cahm
