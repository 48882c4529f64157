#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cahm/backend.hpp"
#include "cahm/bm25.hpp"
#include "cahm/errors.hpp"
#include "cahm/prompting.hpp"
#include "cahm/segmentation.hpp"

namespace cahm {

enum class Strategy { extract, retrieve, cite };

inline std::string to_string(Strategy s) {
    switch (s) {
    case Strategy::extract: return "extract";
    case Strategy::retrieve: return "retrieve";
    case Strategy::cite: return "cite";
    }
    return "retrieve";
}
inline Strategy strategy_from_string(std::string_view s) {
    if (s == "extract") return Strategy::extract;
    if (s == "retrieve") return Strategy::retrieve;
    if (s == "cite") return Strategy::cite;
    throw ConfigError("unknown strategy: " + std::string(s));
}

struct StrategyConfig {
    Strategy strategy = Strategy::retrieve;
    long target_context_tokens = 1150;
    long passage_tokens = 100;
    int top_k = 0; // 0 derives the value from the token budget
    int max_extract_sentences = 20;
    double bm25_k1 = 1.2;
    double bm25_b = 0.75;

    bool operator==(const StrategyConfig&) const = default;

    int resolved_top_k() const {
        if (top_k > 0) return top_k;
        return static_cast<int>(
            std::llround(static_cast<double>(target_context_tokens) / static_cast<double>(passage_tokens)));
    }

    void validate() const {
        if (top_k < 0) throw ConfigError("top_k must be >= 1 (or 0 to derive)");
        if (passage_tokens < 10) throw ConfigError("passage_tokens must be >= 10");
        if (target_context_tokens < passage_tokens)
            throw ConfigError("target_context_tokens must be >= passage_tokens");
        if (max_extract_sentences < 1) throw ConfigError("max_extract_sentences must be >= 1");
        if (bm25_k1 < 0.0) throw ConfigError("bm25_k1 must be >= 0");
        if (bm25_b < 0.0 || bm25_b > 1.0) throw ConfigError("bm25_b must be in [0, 1]");
        if (resolved_top_k() < 1) throw ConfigError("derived top_k is 0; raise target_context_tokens");
    }

    Bm25Params bm25() const { return Bm25Params{bm25_k1, bm25_b}; }
};

// Selected context passages in document order, relabeled 1..n. score_trace[i]
// is the selection score of passages[i]: centrality for extract, BM25 for
// retrieve, citation count for cite.
struct ContextBundle {
    Strategy strategy = Strategy::retrieve;
    std::vector<Passage> passages;
    std::vector<double> score_trace;

    long total_tokens() const {
        long n = 0;
        for (const auto& p : passages) n += p.token_count;
        return n;
    }
};

namespace detail {

inline ContextBundle make_bundle(Strategy strategy, std::vector<Passage> passages,
                                 std::vector<double> scores) {
    ContextBundle b;
    b.strategy = strategy;
    b.passages = std::move(passages);
    b.score_trace = std::move(scores);
    for (size_t i = 0; i < b.passages.size(); ++i)
        b.passages[i].label = static_cast<int>(i) + 1;
    return b;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Extract: TF-ISF sentence centrality with a greedy redundancy filter
// ---------------------------------------------------------------------------

namespace detail {

struct SentenceRecord {
    std::string text;
    SourceSpan origin;
    long token_count = 0;
};

inline std::vector<SentenceRecord> collect_sentences(const std::vector<Passage>& passages,
                                                     const Tokenizer& tok) {
    std::vector<SentenceRecord> out;
    for (const auto& p : passages) {
        for (auto [b, e] : sentence_spans(p.text)) {
            SentenceRecord r;
            r.text = p.text.substr(b, e - b);
            r.origin = SourceSpan{p.origin.doc_id, p.origin.begin + b, p.origin.begin + e};
            r.token_count = tok.count(r.text);
            out.push_back(std::move(r));
        }
    }
    return out;
}

// tf-isf centrality, normalized by sentence term count:
//   score(s) = sum over distinct terms t of tf(t, s) * ln(1 + N / sf(t)) / |s|
inline std::vector<double> centrality_scores(const std::vector<std::vector<std::string>>& sentence_terms) {
    const double n = static_cast<double>(sentence_terms.size());
    std::map<std::string, long> sf;
    for (const auto& terms : sentence_terms) {
        std::set<std::string> distinct(terms.begin(), terms.end());
        for (const auto& t : distinct) ++sf[t];
    }
    std::vector<double> scores(sentence_terms.size(), 0.0);
    for (size_t i = 0; i < sentence_terms.size(); ++i) {
        const auto& terms = sentence_terms[i];
        if (terms.empty()) continue;
        std::map<std::string, long> tf;
        for (const auto& t : terms) ++tf[t];
        double s = 0.0;
        for (const auto& [t, f] : tf) s += f * std::log(1.0 + n / sf.at(t));
        scores[i] = s / static_cast<double>(terms.size());
    }
    return scores;
}

// 3-gram shingles; sentences shorter than 3 terms contribute one whole-sentence gram.
inline std::set<std::string> trigram_set(const std::vector<std::string>& terms) {
    std::set<std::string> grams;
    if (terms.size() < 3) {
        std::string g;
        for (const auto& t : terms) {
            if (!g.empty()) g += ' ';
            g += t;
        }
        if (!g.empty()) grams.insert(g);
        return grams;
    }
    for (size_t i = 0; i + 3 <= terms.size(); ++i)
        grams.insert(terms[i] + ' ' + terms[i + 1] + ' ' + terms[i + 2]);
    return grams;
}

} // namespace detail

inline ContextBundle extract_select(const std::vector<Passage>& passages, const StrategyConfig& cfg,
                                    const Tokenizer& tok) {
    auto sentences = detail::collect_sentences(passages, tok);
    std::vector<std::vector<std::string>> terms(sentences.size());
    for (size_t i = 0; i < sentences.size(); ++i) terms[i] = term_tokens(sentences[i].text);
    auto scores = detail::centrality_scores(terms);

    std::vector<size_t> order(sentences.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });

    const long budget = cfg.target_context_tokens + cfg.passage_tokens;
    std::set<std::string> chosen_grams;
    std::vector<size_t> chosen;
    long used = 0;
    for (size_t idx : order) {
        if (static_cast<int>(chosen.size()) >= cfg.max_extract_sentences) break;
        if (used + sentences[idx].token_count > budget) break;
        auto grams = detail::trigram_set(terms[idx]);
        if (!grams.empty() && !chosen_grams.empty()) {
            size_t overlap = 0;
            for (const auto& g : grams)
                if (chosen_grams.count(g)) ++overlap;
            if (2 * overlap >= grams.size()) continue; // overlap ratio >= 0.5
        }
        chosen.push_back(idx);
        used += sentences[idx].token_count;
        chosen_grams.insert(grams.begin(), grams.end());
    }
    std::sort(chosen.begin(), chosen.end());

    std::vector<Passage> out;
    std::vector<double> trace;
    for (size_t idx : chosen) {
        Passage p;
        p.text = sentences[idx].text;
        p.token_count = sentences[idx].token_count;
        p.origin = sentences[idx].origin;
        out.push_back(std::move(p));
        trace.push_back(scores[idx]);
    }
    return detail::make_bundle(Strategy::extract, std::move(out), std::move(trace));
}

inline ContextBundle extract_select(std::string_view text, const StrategyConfig& cfg, const Tokenizer& tok,
                                    const std::string& doc_id = "", size_t base_offset = 0) {
    if (text.empty()) throw ConfigError("extract_select: empty input text");
    Passage whole;
    whole.label = 1;
    whole.text = std::string(text);
    whole.token_count = tok.count(text);
    whole.origin = SourceSpan{doc_id, base_offset, base_offset + text.size()};
    return extract_select(std::vector<Passage>{std::move(whole)}, cfg, tok);
}

// ---------------------------------------------------------------------------
// Retrieve: BM25 over passages with the summary as query
// ---------------------------------------------------------------------------

inline std::vector<ScoredPassage> bm25_rank(std::string_view query, const std::vector<Passage>& passages,
                                            const StrategyConfig& cfg) {
    return bm25_rank(query, passages, cfg.bm25());
}

inline ContextBundle retrieve_select(std::string_view summary, const std::vector<Passage>& passages,
                                     const StrategyConfig& cfg) {
    if (summary.empty()) throw ConfigError("retrieve_select: empty query summary");
    auto ranked = bm25_rank(summary, passages, cfg.bm25());
    const size_t k = std::min<size_t>(static_cast<size_t>(cfg.resolved_top_k()), ranked.size());

    std::vector<std::pair<size_t, double>> picked; // (passage index, score)
    for (size_t r = 0; r < k; ++r)
        picked.emplace_back(static_cast<size_t>(ranked[r].label - 1), ranked[r].score);
    std::sort(picked.begin(), picked.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    std::vector<Passage> out;
    std::vector<double> trace;
    for (auto [idx, score] : picked) {
        out.push_back(passages[idx]);
        trace.push_back(score);
    }
    return detail::make_bundle(Strategy::retrieve, std::move(out), std::move(trace));
}

inline ContextBundle retrieve_select(std::string_view summary, std::string_view source_text,
                                     const StrategyConfig& cfg, const Tokenizer& tok,
                                     const std::string& doc_id = "", size_t base_offset = 0) {
    auto passages = split_passages(source_text, cfg.passage_tokens, tok, doc_id, base_offset);
    return retrieve_select(summary, passages, cfg);
}

// ---------------------------------------------------------------------------
// Cite: citation parsing and coverage-constrained passage selection
// ---------------------------------------------------------------------------

struct CitationParse {
    std::string clean_text;
    std::vector<std::pair<int, int>> citations; // (sentence index into clean_text, label)
    std::map<int, long> label_counts;
    std::vector<std::string> diagnostics;
};

// Scans for [n] markers. Markers with n in 1..num_labels are counted; every
// digit marker is removed from clean_text (out-of-range ones are reported in
// diagnostics). A space run left dangling before a removed marker is dropped
// when more whitespace follows, so sentence seams stay single-spaced.
inline CitationParse parse_citations(std::string_view response, int num_labels) {
    CitationParse out;
    std::string& clean = out.clean_text;
    std::vector<std::pair<size_t, int>> valid_at; // (position in clean, label)

    size_t pos = 0;
    while (pos < response.size()) {
        size_t open = response.find('[', pos);
        if (open == std::string_view::npos) {
            clean.append(response.substr(pos));
            break;
        }
        size_t close = response.find(']', open + 1);
        bool digits = close != std::string_view::npos && close > open + 1;
        for (size_t i = open + 1; digits && i < close; ++i)
            if (response[i] < '0' || response[i] > '9') digits = false;
        if (!digits) {
            if (close != std::string_view::npos && close - open <= 12)
                out.diagnostics.push_back("unparsed bracket segment '" +
                                          std::string(response.substr(open, close - open + 1)) + "'");
            clean.append(response.substr(pos, open + 1 - pos));
            pos = open + 1;
            continue;
        }
        clean.append(response.substr(pos, open - pos));
        long label = 0;
        for (size_t i = open + 1; i < close; ++i) label = std::min<long>(label * 10 + (response[i] - '0'), 1000000);
        pos = close + 1;
        bool next_is_ws = pos < response.size() && is_space_byte(response[pos]);
        if (next_is_ws) {
            while (!clean.empty() && is_space_byte(clean.back())) clean.pop_back();
        }
        if (label >= 1 && label <= num_labels) {
            valid_at.emplace_back(clean.size(), static_cast<int>(label));
        } else {
            out.diagnostics.push_back("citation [" + std::to_string(label) + "] out of range 1.." +
                                      std::to_string(num_labels));
        }
    }

    size_t lead = 0;
    while (lead < clean.size() && is_space_byte(clean[lead])) ++lead;
    size_t tail = clean.size();
    while (tail > lead && is_space_byte(clean[tail - 1])) --tail;
    clean = clean.substr(lead, tail - lead);

    auto spans = sentence_spans(clean);
    for (auto& [raw_pos, label] : valid_at) {
        size_t p = raw_pos > lead ? raw_pos - lead : 0;
        p = std::min(p, clean.size());
        int sentence = -1;
        if (p > 0) {
            size_t before = p - 1;
            for (size_t i = 0; i < spans.size(); ++i) {
                if (spans[i].first <= before && before < spans[i].second) {
                    sentence = static_cast<int>(i);
                    break;
                }
                if (spans[i].first > before) break;
                sentence = static_cast<int>(i); // between spans: attribute to the last one begun
            }
        }
        out.citations.emplace_back(sentence, label);
        ++out.label_counts[label];
    }
    return out;
}

// Coverage-constrained selection over cited passages. Labels are processed in
// citation-count order; all passages of all labels sharing a count form one
// batch so that equal counts never impose an arbitrary label order. Whole
// batches are appended while they fit; the first batch that would overflow
// supplies candidates for the coverage fill over section midpoints (2i+1)/2k.
inline ContextBundle cite_select(const CitationParse& parse, const std::vector<Passage>& passages, int k) {
    if (k <= 0) throw ConfigError("cite_select: k must be >= 1");
    const size_t m = passages.size();

    std::map<int, std::vector<size_t>> owned; // label -> passage indices (document order)
    for (size_t i = 0; i < m; ++i) owned[passages[i].label].push_back(i);

    std::map<long, std::vector<int>, std::greater<long>> by_count; // count -> labels ascending
    for (const auto& [label, count] : parse.label_counts)
        if (count > 0 && owned.count(label)) by_count[count].push_back(label);

    std::vector<size_t> selected;
    std::vector<size_t> candidates;
    std::vector<long> count_of(m, 0);
    bool overflow = false;
    for (const auto& [count, labels] : by_count) {
        std::vector<size_t> batch;
        for (int label : labels)
            for (size_t idx : owned.at(label)) {
                batch.push_back(idx);
                count_of[idx] = count;
            }
        std::sort(batch.begin(), batch.end());
        if (selected.size() + batch.size() > static_cast<size_t>(k)) {
            overflow = true;
            candidates = std::move(batch);
            break;
        }
        selected.insert(selected.end(), batch.begin(), batch.end());
    }

    if (overflow) {
        auto position = [&](size_t idx) { return (static_cast<double>(idx) + 0.5) / static_cast<double>(m); };
        std::vector<double> sections;
        for (int i = 0; i < k; ++i) sections.push_back((2.0 * i + 1.0) / (2.0 * k));

        auto closest_section = [&](double pos) {
            size_t best = 0;
            double best_d = std::abs(pos - sections[0]);
            for (size_t s = 1; s < sections.size(); ++s) {
                double d = std::abs(pos - sections[s]);
                if (d < best_d) {
                    best_d = d;
                    best = s;
                }
            }
            return std::pair<size_t, double>(best, best_d);
        };

        std::vector<size_t> ordered = selected;
        std::sort(ordered.begin(), ordered.end());
        for (size_t idx : ordered) {
            auto [s, _] = closest_section(position(idx));
            sections.erase(sections.begin() + static_cast<long>(s));
        }

        while (selected.size() < static_cast<size_t>(k) && !candidates.empty() && !sections.empty()) {
            size_t best_c = 0;
            size_t best_section = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (size_t c = 0; c < candidates.size(); ++c) {
                auto [s, d] = closest_section(position(candidates[c]));
                if (d < best_d) {
                    best_d = d;
                    best_c = c;
                    best_section = s;
                }
            }
            selected.push_back(candidates[best_c]);
            candidates.erase(candidates.begin() + static_cast<long>(best_c));
            sections.erase(sections.begin() + static_cast<long>(best_section));
        }
    }

    std::sort(selected.begin(), selected.end());
    std::vector<Passage> out;
    std::vector<double> trace;
    for (size_t idx : selected) {
        out.push_back(passages[idx]);
        trace.push_back(static_cast<double>(count_of[idx]));
    }
    return detail::make_bundle(Strategy::cite, std::move(out), std::move(trace));
}

// ---------------------------------------------------------------------------
// Incorporate-Context entry point
// ---------------------------------------------------------------------------

// Input is either raw text or pre-segmented passages (passages win when both
// are set). The tag names the node in journal entries and error messages.
struct IcInput {
    std::string text;
    std::vector<Passage> passages;
    std::string doc_id;
    size_t base_offset = 0;
    std::string tag;
};

struct IcResult {
    std::string summary;
    ContextBundle bundle;
    std::string prompt;
    std::string raw_response;
    std::vector<std::string> diagnostics;
    GenResult gen;
    bool called_backend = false;
};

namespace detail {

inline std::vector<Passage> ic_passages(const IcInput& in, const StrategyConfig& cfg, const Tokenizer& tok) {
    if (!in.passages.empty()) {
        auto copy = in.passages;
        for (size_t i = 0; i < copy.size(); ++i) copy[i].label = static_cast<int>(i) + 1;
        return copy;
    }
    return split_passages(in.text, cfg.passage_tokens, tok, in.doc_id, in.base_offset);
}

inline std::string ic_joined_text(const IcInput& in) {
    if (!in.passages.empty()) {
        std::string out;
        for (size_t i = 0; i < in.passages.size(); ++i) {
            if (i) out += ' ';
            out += in.passages[i].text;
        }
        return out;
    }
    return in.text;
}

} // namespace detail

// Runs one strategy over one node's input. Extract and Retrieve reuse
// prior_summary when given (merge levels) and otherwise generate one with the
// plain summarization prompt; Cite always generates, and its summary is the
// citation-stripped response.
inline IcResult incorporate_context(const IcInput& in, const std::optional<std::string>& prior_summary,
                                    const StrategyConfig& cfg, Backend& backend, const PromptSet& prompts) {
    cfg.validate();
    const Tokenizer& tok = backend.tokenizer();
    IcResult res;

    if (cfg.strategy == Strategy::cite) {
        auto passages = detail::ic_passages(in, cfg, tok);
        if (passages.empty()) throw ConfigError("incorporate_context: no passages for '" + in.tag + "'");
        res.prompt = prompts.render(TemplateId::chunk_summary_citations, {label_passages_block(passages)});
        res.gen = backend.generate(GenRequest{res.prompt, in.tag});
        res.called_backend = true;
        res.raw_response = res.gen.text;
        auto parse = parse_citations(res.raw_response, static_cast<int>(passages.size()));
        res.summary = parse.clean_text;
        res.diagnostics = parse.diagnostics;
        res.bundle = cite_select(parse, passages, cfg.resolved_top_k());
        return res;
    }

    if (prior_summary && !prior_summary->empty()) {
        res.summary = *prior_summary;
    } else {
        res.prompt = prompts.render(TemplateId::chunk_summary, {detail::ic_joined_text(in)});
        res.gen = backend.generate(GenRequest{res.prompt, in.tag});
        res.called_backend = true;
        res.raw_response = res.gen.text;
        res.summary = res.gen.text;
    }

    if (cfg.strategy == Strategy::extract) {
        res.bundle = in.passages.empty() ? extract_select(in.text, cfg, tok, in.doc_id, in.base_offset)
                                         : extract_select(in.passages, cfg, tok);
    } else {
        res.bundle = in.passages.empty()
                         ? retrieve_select(res.summary, in.text, cfg, tok, in.doc_id, in.base_offset)
                         : retrieve_select(res.summary, in.passages, cfg);
    }
    return res;
}

} // namespace cahm
