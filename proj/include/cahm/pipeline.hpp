#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cahm/backend.hpp"
#include "cahm/context_selection.hpp"
#include "cahm/errors.hpp"
#include "cahm/prompting.hpp"
#include "cahm/segmentation.hpp"

namespace cahm {

inline constexpr int run_schema_version = 1;

enum class Mode { replace, support };
enum class Baseline { zeroshot, hmerge, cite_hmerge };

inline std::string to_string(Mode m) { return m == Mode::replace ? "replace" : "support"; }
inline Mode mode_from_string(std::string_view s) {
    if (s == "replace") return Mode::replace;
    if (s == "support") return Mode::support;
    throw ConfigError("unknown mode: " + std::string(s));
}

inline std::string to_string(Baseline b) {
    switch (b) {
    case Baseline::zeroshot: return "zeroshot";
    case Baseline::hmerge: return "hmerge";
    case Baseline::cite_hmerge: return "cite-hmerge";
    }
    return "hmerge";
}
inline Baseline baseline_from_string(std::string_view s) {
    if (s == "zeroshot") return Baseline::zeroshot;
    if (s == "hmerge") return Baseline::hmerge;
    if (s == "cite-hmerge") return Baseline::cite_hmerge;
    throw ConfigError("unknown baseline: " + std::string(s));
}

struct PipelineConfig {
    std::optional<Strategy> strategy;
    std::optional<Mode> mode;
    std::optional<Baseline> baseline;
    long chunk_tokens = 8000;
    long merge_context_tokens = 8000;
    long passage_tokens = 100;
    long target_context_tokens = 1150;
    int top_k = 0;
    int max_extract_sentences = 20;
    double bm25_k1 = 1.2;
    double bm25_b = 0.75;
    BackendConfig backend;
    TokenizerSpec tokenizer;
    std::string prompt_dir;

    bool operator==(const PipelineConfig&) const = default;

    StrategyConfig selection() const {
        StrategyConfig s;
        s.strategy = strategy.value_or(Strategy::retrieve);
        s.target_context_tokens = target_context_tokens;
        s.passage_tokens = passage_tokens;
        s.top_k = top_k;
        s.max_extract_sentences = max_extract_sentences;
        s.bm25_k1 = bm25_k1;
        s.bm25_b = bm25_b;
        return s;
    }

    void validate() const {
        const bool variant = strategy.has_value() || mode.has_value();
        if (baseline && variant)
            throw ConfigError("choose either a baseline or a strategy+mode, not both");
        if (!baseline && !(strategy && mode))
            throw ConfigError("either --baseline or both --strategy and --mode are required");
        if (chunk_tokens < 64) throw ConfigError("chunk_tokens must be >= 64");
        if (merge_context_tokens < 64) throw ConfigError("merge_context_tokens must be >= 64");
        selection().validate();
    }
};

struct SummaryNode {
    std::string id;
    int level = 1;
    std::vector<std::string> children;
    std::string summary;
    std::optional<ContextBundle> bundle;
    std::string prompt;
    std::string raw_response;
    long prompt_tokens = 0;
    long output_tokens = 0;
    std::vector<std::string> diagnostics;
    std::vector<std::string> warnings;
    bool missing = false; // rebuild marker for nodes lost to an aborted run
};

struct MergeGroup {
    std::vector<std::string> node_ids;
    long planned_tokens = 0;
    bool pass_through = false;
};

struct MergePlan {
    std::vector<MergeGroup> groups;
};

struct JournalEntry {
    std::string tag;
    long prompt_tokens = 0;
    long output_tokens = 0;
    double latency_s = 0.0;
    int retries = 0;
};

struct RunArtifact {
    PipelineConfig config;
    std::string doc_id;
    std::vector<SummaryNode> nodes; // level-major, document order inside a level
    std::vector<MergePlan> plans;   // one per merge level, in order
    std::vector<JournalEntry> journal;
    std::string final_summary;

    std::vector<size_t> level_sizes() const {
        std::vector<size_t> sizes;
        for (const auto& n : nodes) {
            if (n.level > static_cast<int>(sizes.size())) sizes.resize(n.level, 0);
            ++sizes[n.level - 1];
        }
        return sizes;
    }

    const SummaryNode* find(const std::string& id) const {
        for (const auto& n : nodes)
            if (n.id == id) return &n;
        return nullptr;
    }
};

inline std::string node_id(int level, size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "L%d_%03zu", level, index);
    return buf;
}

// ---------------------------------------------------------------------------
// JSON serialization (keys sort alphabetically, keeping artifacts stable)
// ---------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const TokenizerSpec& s) {
    j = {{"scheme", to_string(s.scheme)}, {"vocab_path", s.vocab_path}};
}
inline void from_json(const nlohmann::json& j, TokenizerSpec& s) {
    s.scheme = token_scheme_from_string(j.at("scheme").get<std::string>());
    s.vocab_path = j.at("vocab_path").get<std::string>();
}

inline void to_json(nlohmann::json& j, const BackendConfig& c) {
    j = {{"kind", to_string(c.kind)},
         {"mock_style", to_string(c.mock_style)},
         {"mock_head_sentences", c.mock_head_sentences},
         {"mock_latency_ms", c.mock_latency_ms},
         {"base_url", c.base_url},
         {"model", c.model},
         {"api_key_env", c.api_key_env},
         {"context_window", c.context_window},
         {"max_output_tokens", c.max_output_tokens},
         {"temperature", c.temperature},
         {"request_timeout_s", c.request_timeout_s},
         {"max_retries", c.max_retries},
         {"retry_base_delay_ms", c.retry_base_delay_ms},
         {"parallelism", c.parallelism}};
}
inline void from_json(const nlohmann::json& j, BackendConfig& c) {
    c.kind = backend_kind_from_string(j.at("kind").get<std::string>());
    c.mock_style = mock_style_from_string(j.at("mock_style").get<std::string>());
    j.at("mock_head_sentences").get_to(c.mock_head_sentences);
    j.at("mock_latency_ms").get_to(c.mock_latency_ms);
    j.at("base_url").get_to(c.base_url);
    j.at("model").get_to(c.model);
    j.at("api_key_env").get_to(c.api_key_env);
    j.at("context_window").get_to(c.context_window);
    j.at("max_output_tokens").get_to(c.max_output_tokens);
    j.at("temperature").get_to(c.temperature);
    j.at("request_timeout_s").get_to(c.request_timeout_s);
    j.at("max_retries").get_to(c.max_retries);
    j.at("retry_base_delay_ms").get_to(c.retry_base_delay_ms);
    j.at("parallelism").get_to(c.parallelism);
}

inline void to_json(nlohmann::json& j, const SourceSpan& s) {
    j = {{"doc_id", s.doc_id}, {"begin", s.begin}, {"end", s.end}};
}
inline void from_json(const nlohmann::json& j, SourceSpan& s) {
    j.at("doc_id").get_to(s.doc_id);
    j.at("begin").get_to(s.begin);
    j.at("end").get_to(s.end);
}

inline void to_json(nlohmann::json& j, const Passage& p) {
    j = {{"label", p.label}, {"text", p.text}, {"token_count", p.token_count}, {"origin", p.origin}};
}
inline void from_json(const nlohmann::json& j, Passage& p) {
    j.at("label").get_to(p.label);
    j.at("text").get_to(p.text);
    j.at("token_count").get_to(p.token_count);
    j.at("origin").get_to(p.origin);
}

inline void to_json(nlohmann::json& j, const ContextBundle& b) {
    j = {{"strategy", to_string(b.strategy)}, {"passages", b.passages}, {"score_trace", b.score_trace}};
}
inline void from_json(const nlohmann::json& j, ContextBundle& b) {
    b.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    j.at("passages").get_to(b.passages);
    j.at("score_trace").get_to(b.score_trace);
}

inline void to_json(nlohmann::json& j, const SummaryNode& n) {
    j = {{"id", n.id},
         {"level", n.level},
         {"children", n.children},
         {"summary", n.summary},
         {"bundle", nullptr},
         {"prompt", n.prompt},
         {"raw_response", n.raw_response},
         {"prompt_tokens", n.prompt_tokens},
         {"output_tokens", n.output_tokens},
         {"diagnostics", n.diagnostics},
         {"warnings", n.warnings}};
    if (n.bundle) j["bundle"] = *n.bundle;
}
inline void from_json(const nlohmann::json& j, SummaryNode& n) {
    j.at("id").get_to(n.id);
    j.at("level").get_to(n.level);
    j.at("children").get_to(n.children);
    j.at("summary").get_to(n.summary);
    if (!j.at("bundle").is_null()) n.bundle = j.at("bundle").get<ContextBundle>();
    j.at("prompt").get_to(n.prompt);
    j.at("raw_response").get_to(n.raw_response);
    j.at("prompt_tokens").get_to(n.prompt_tokens);
    j.at("output_tokens").get_to(n.output_tokens);
    j.at("diagnostics").get_to(n.diagnostics);
    j.at("warnings").get_to(n.warnings);
    n.missing = false;
}

inline void to_json(nlohmann::json& j, const JournalEntry& e) {
    j = {{"tag", e.tag},
         {"prompt_tokens", e.prompt_tokens},
         {"output_tokens", e.output_tokens},
         {"latency_s", e.latency_s},
         {"retries", e.retries}};
}
inline void from_json(const nlohmann::json& j, JournalEntry& e) {
    j.at("tag").get_to(e.tag);
    j.at("prompt_tokens").get_to(e.prompt_tokens);
    j.at("output_tokens").get_to(e.output_tokens);
    j.at("latency_s").get_to(e.latency_s);
    j.at("retries").get_to(e.retries);
}

inline void to_json(nlohmann::json& j, const PipelineConfig& c) {
    j = {{"schema_version", run_schema_version},
         {"strategy", nullptr},
         {"mode", nullptr},
         {"baseline", nullptr},
         {"chunk_tokens", c.chunk_tokens},
         {"merge_context_tokens", c.merge_context_tokens},
         {"passage_tokens", c.passage_tokens},
         {"target_context_tokens", c.target_context_tokens},
         {"top_k", c.top_k},
         {"max_extract_sentences", c.max_extract_sentences},
         {"bm25_k1", c.bm25_k1},
         {"bm25_b", c.bm25_b},
         {"backend", c.backend},
         {"tokenizer", c.tokenizer},
         {"prompt_dir", c.prompt_dir}};
    if (c.strategy) j["strategy"] = to_string(*c.strategy);
    if (c.mode) j["mode"] = to_string(*c.mode);
    if (c.baseline) j["baseline"] = to_string(*c.baseline);
}
inline void from_json(const nlohmann::json& j, PipelineConfig& c) {
    int version = j.at("schema_version").get<int>();
    if (version != run_schema_version)
        throw ArtifactError("unsupported run schema version " + std::to_string(version) + " (expected " +
                            std::to_string(run_schema_version) + ")");
    c = PipelineConfig{};
    if (!j.at("strategy").is_null()) c.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    if (!j.at("mode").is_null()) c.mode = mode_from_string(j.at("mode").get<std::string>());
    if (!j.at("baseline").is_null()) c.baseline = baseline_from_string(j.at("baseline").get<std::string>());
    j.at("chunk_tokens").get_to(c.chunk_tokens);
    j.at("merge_context_tokens").get_to(c.merge_context_tokens);
    j.at("passage_tokens").get_to(c.passage_tokens);
    j.at("target_context_tokens").get_to(c.target_context_tokens);
    j.at("top_k").get_to(c.top_k);
    j.at("max_extract_sentences").get_to(c.max_extract_sentences);
    j.at("bm25_k1").get_to(c.bm25_k1);
    j.at("bm25_b").get_to(c.bm25_b);
    j.at("backend").get_to(c.backend);
    j.at("tokenizer").get_to(c.tokenizer);
    j.at("prompt_dir").get_to(c.prompt_dir);
}

// ---------------------------------------------------------------------------
// Merge planning
// ---------------------------------------------------------------------------

namespace detail {

// Which template a merge call at this configuration uses. Replace repeats the
// chunk-level process, so it plans against the chunk templates.
inline TemplateId merge_template(const PipelineConfig& cfg) {
    if (cfg.baseline) {
        switch (*cfg.baseline) {
        case Baseline::zeroshot: return TemplateId::chunk_summary;
        case Baseline::hmerge: return TemplateId::merge_plain;
        case Baseline::cite_hmerge: return TemplateId::merge_citations;
        }
    }
    const bool cite = cfg.strategy == Strategy::cite;
    if (cfg.mode == Mode::replace)
        return cite ? TemplateId::chunk_summary_citations : TemplateId::chunk_summary;
    return cite ? TemplateId::merge_support_citations : TemplateId::merge_support;
}

// Token size of one node's merge input: bundle passages in Replace mode,
// the summary otherwise. Joiners are not counted.
inline long merge_input_tokens(const SummaryNode& node, const PipelineConfig& cfg, const Tokenizer& tok) {
    if (cfg.mode == Mode::replace && !cfg.baseline) {
        long n = 0;
        if (node.bundle)
            for (const auto& p : node.bundle->passages) n += p.token_count;
        return n;
    }
    return tok.count(node.summary);
}

} // namespace detail

// Greedy left-to-right packing under merge_context_tokens. A node too large
// even for a solo merge call (its input exceeds limit minus template
// overhead) becomes a pass-through group: carried up one level uncalled.
inline MergePlan plan_level(const std::vector<SummaryNode>& nodes, const PipelineConfig& cfg,
                            const Tokenizer& tok, const PromptSet& prompts) {
    if (nodes.empty()) throw ConfigError("plan_level: no nodes");
    const long limit = cfg.merge_context_tokens;
    const long overhead = prompts.overhead_tokens(detail::merge_template(cfg), tok);

    MergePlan plan;
    MergeGroup current;
    auto close = [&] {
        if (!current.node_ids.empty()) {
            plan.groups.push_back(std::move(current));
            current = MergeGroup{};
        }
    };
    for (const auto& node : nodes) {
        const long size = detail::merge_input_tokens(node, cfg, tok);
        if (size > limit - overhead) {
            close();
            plan.groups.push_back(MergeGroup{{node.id}, size, true});
            continue;
        }
        if (!current.node_ids.empty() && current.planned_tokens + size > limit) close();
        current.node_ids.push_back(node.id);
        current.planned_tokens += size;
    }
    close();
    return plan;
}

// ---------------------------------------------------------------------------
// Pipeline execution
// ---------------------------------------------------------------------------

namespace detail {

struct NodeOutcome {
    SummaryNode node;
    std::optional<JournalEntry> call;
};

inline JournalEntry journal_of(const std::string& tag, const GenResult& gen) {
    return JournalEntry{tag, gen.prompt_tokens, gen.output_tokens, gen.latency_s, gen.retries};
}

inline void fill_gen(SummaryNode& node, const GenResult& gen) {
    node.prompt_tokens = gen.prompt_tokens;
    node.output_tokens = gen.output_tokens;
}

inline std::vector<Passage> union_bundle_passages(const std::vector<const SummaryNode*>& children) {
    std::vector<Passage> all;
    for (const auto* c : children)
        if (c->bundle)
            for (const auto& p : c->bundle->passages) all.push_back(p);
    for (size_t i = 0; i < all.size(); ++i) all[i].label = static_cast<int>(i) + 1;
    return all;
}

inline std::string join_lines(const std::vector<std::string>& parts) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out += '\n';
        out += parts[i];
    }
    return out;
}

inline NodeOutcome run_leaf(const Document& doc, const Chunk& chunk, const std::string& id,
                            const PipelineConfig& cfg, Backend& backend, const PromptSet& prompts) {
    NodeOutcome out;
    SummaryNode& node = out.node;
    node.id = id;
    node.level = 1;

    if (cfg.baseline == Baseline::hmerge) {
        node.prompt = prompts.render(TemplateId::chunk_summary, {chunk.text});
        GenResult gen = backend.generate(GenRequest{node.prompt, id});
        node.summary = gen.text;
        node.raw_response = gen.text;
        fill_gen(node, gen);
        out.call = journal_of(id, gen);
        return out;
    }
    if (cfg.baseline == Baseline::cite_hmerge) {
        auto passages =
            split_passages(chunk.text, cfg.passage_tokens, backend.tokenizer(), doc.id, chunk.begin);
        node.prompt = prompts.render(TemplateId::chunk_summary_citations, {label_passages_block(passages)});
        GenResult gen = backend.generate(GenRequest{node.prompt, id});
        node.raw_response = gen.text;
        auto parse = parse_citations(gen.text, static_cast<int>(passages.size()));
        node.summary = parse.clean_text;
        node.diagnostics = parse.diagnostics;
        fill_gen(node, gen);
        out.call = journal_of(id, gen);
        return out;
    }

    IcInput in;
    in.text = chunk.text;
    in.doc_id = doc.id;
    in.base_offset = chunk.begin;
    in.tag = id;
    IcResult ic = incorporate_context(in, std::nullopt, cfg.selection(), backend, prompts);
    node.summary = ic.summary;
    node.bundle = std::move(ic.bundle);
    node.prompt = ic.prompt;
    node.raw_response = ic.raw_response;
    node.diagnostics = ic.diagnostics;
    fill_gen(node, ic.gen);
    out.call = journal_of(id, ic.gen);
    return out;
}

inline NodeOutcome run_merge(const std::vector<const SummaryNode*>& children, const MergeGroup& group,
                             const std::string& id, int level, const PipelineConfig& cfg, Backend& backend,
                             const PromptSet& prompts) {
    NodeOutcome out;
    SummaryNode& node = out.node;
    node.id = id;
    node.level = level;
    for (const auto* c : children) node.children.push_back(c->id);

    if (group.pass_through) {
        const SummaryNode& child = *children.front();
        node.summary = child.summary;
        node.bundle = child.bundle;
        node.warnings.push_back("passed through unmerged: " + std::to_string(group.planned_tokens) +
                                " input tokens exceed the merge budget");
        return out;
    }

    std::vector<std::string> summaries;
    for (const auto* c : children) summaries.push_back(c->summary);

    if (cfg.baseline == Baseline::hmerge) {
        node.prompt = prompts.render(TemplateId::merge_plain, {join_lines(summaries)});
        GenResult gen = backend.generate(GenRequest{node.prompt, id});
        node.summary = gen.text;
        node.raw_response = gen.text;
        fill_gen(node, gen);
        out.call = journal_of(id, gen);
        return out;
    }
    if (cfg.baseline == Baseline::cite_hmerge) {
        // each child summary, already citation-stripped, becomes one labeled item
        std::vector<Passage> items;
        for (size_t i = 0; i < summaries.size(); ++i) {
            Passage p;
            p.label = static_cast<int>(i) + 1;
            p.text = summaries[i];
            items.push_back(std::move(p));
        }
        node.prompt = prompts.render(TemplateId::merge_citations, {label_passages_block(items)});
        GenResult gen = backend.generate(GenRequest{node.prompt, id});
        node.raw_response = gen.text;
        auto parse = parse_citations(gen.text, static_cast<int>(items.size()));
        node.summary = parse.clean_text;
        node.diagnostics = parse.diagnostics;
        fill_gen(node, gen);
        out.call = journal_of(id, gen);
        return out;
    }

    const StrategyConfig sel = cfg.selection();
    const Tokenizer& tok = backend.tokenizer();
    std::vector<Passage> all = union_bundle_passages(children);

    if (cfg.mode == Mode::replace) {
        IcInput in;
        in.passages = all;
        in.tag = id;
        IcResult ic = incorporate_context(in, std::nullopt, sel, backend, prompts);
        node.summary = ic.summary;
        node.bundle = std::move(ic.bundle);
        node.prompt = ic.prompt;
        node.raw_response = ic.raw_response;
        node.diagnostics = ic.diagnostics;
        fill_gen(node, ic.gen);
        out.call = journal_of(id, ic.gen);
        return out;
    }

    // Support: summaries carry the gist, passages ride along as evidence.
    // The prompt must fit the merge budget jointly, so evidence passages are
    // dropped from the end when the combination overflows; selection for the
    // next level still sees the full union.
    const TemplateId tid =
        sel.strategy == Strategy::cite ? TemplateId::merge_support_citations : TemplateId::merge_support;
    long budget = cfg.merge_context_tokens - prompts.overhead_tokens(tid, tok);
    for (const auto& s : summaries) budget -= tok.count(s);
    std::vector<Passage> kept = all;
    long kept_tokens = 0;
    for (const auto& p : kept) kept_tokens += p.token_count;
    while (!kept.empty() && kept_tokens > budget) {
        kept_tokens -= kept.back().token_count;
        kept.pop_back();
    }
    if (kept.size() < all.size())
        node.warnings.push_back("dropped " + std::to_string(all.size() - kept.size()) + " of " +
                                std::to_string(all.size()) + " context passages to fit the merge budget");
    for (size_t i = 0; i < kept.size(); ++i) kept[i].label = static_cast<int>(i) + 1;

    if (sel.strategy == Strategy::cite) {
        node.prompt = prompts.render(tid, {join_lines(summaries), label_passages_block(kept)});
        GenResult gen = backend.generate(GenRequest{node.prompt, id});
        node.raw_response = gen.text;
        auto parse = parse_citations(gen.text, static_cast<int>(kept.size()));
        node.summary = parse.clean_text;
        node.diagnostics = parse.diagnostics;
        node.bundle = cite_select(parse, kept, sel.resolved_top_k());
        fill_gen(node, gen);
        out.call = journal_of(id, gen);
        return out;
    }

    std::vector<std::string> kept_texts;
    for (const auto& p : kept) kept_texts.push_back(p.text);
    node.prompt = prompts.render(tid, {join_lines(summaries), join_lines(kept_texts)});
    GenResult gen = backend.generate(GenRequest{node.prompt, id});
    node.summary = gen.text;
    node.raw_response = gen.text;
    fill_gen(node, gen);
    out.call = journal_of(id, gen);

    node.bundle = sel.strategy == Strategy::extract ? extract_select(all, sel, tok)
                                                    : retrieve_select(node.summary, all, sel);
    return out;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ArtifactError("cannot write " + path.string());
    out << content;
    if (!out) throw ArtifactError("short write to " + path.string());
}

inline void persist_config(const std::filesystem::path& dir, const PipelineConfig& cfg) {
    std::filesystem::create_directories(dir / "nodes");
    write_file(dir / "config.json", nlohmann::json(cfg).dump(2) + "\n");
}

inline void persist_node(const std::filesystem::path& dir, const SummaryNode& node) {
    write_file(dir / "nodes" / (node.id + ".json"), nlohmann::json(node).dump(2) + "\n");
}

inline void append_journal(const std::filesystem::path& dir, const std::vector<JournalEntry>& entries) {
    std::ofstream out(dir / "journal.jsonl", std::ios::binary | std::ios::app);
    if (!out) throw ArtifactError("cannot write " + (dir / "journal.jsonl").string());
    for (const auto& e : entries) out << nlohmann::json(e).dump() << "\n";
}

// Collects per-node results level by level. Failed nodes abort the run, but
// everything already completed is persisted first so the tree can be rebuilt
// with missing markers.
class LevelCollector {
public:
    LevelCollector(RunArtifact& art, const std::filesystem::path& out_dir) : art_(art), out_dir_(out_dir) {}

    std::vector<SummaryNode> collect(std::vector<std::future<NodeOutcome>>& futures) {
        std::vector<SummaryNode> level_nodes;
        std::vector<JournalEntry> entries;
        std::exception_ptr first_error;
        for (auto& f : futures) {
            try {
                NodeOutcome o = f.get();
                if (o.call) entries.push_back(*o.call);
                level_nodes.push_back(std::move(o.node));
            } catch (...) {
                if (!first_error) first_error = std::current_exception();
            }
        }
        for (const auto& n : level_nodes) {
            art_.nodes.push_back(n);
            if (!out_dir_.empty()) persist_node(out_dir_, n);
        }
        for (const auto& e : entries) art_.journal.push_back(e);
        if (!out_dir_.empty()) append_journal(out_dir_, entries);
        if (first_error) std::rethrow_exception(first_error);
        return level_nodes;
    }

private:
    RunArtifact& art_;
    std::filesystem::path out_dir_;
};

} // namespace detail

// Runs the full tree for one document. When out_dir is non-empty the artifact
// is persisted incrementally, so an aborted run leaves a partial tree behind.
inline RunArtifact run_pipeline(const Document& doc, const PipelineConfig& cfg, Backend& backend,
                                const PromptSet& prompts, const std::filesystem::path& out_dir = {}) {
    cfg.validate();
    if (doc.text.empty()) throw ConfigError("run_pipeline: empty document " + doc.id);
    const Tokenizer& tok = backend.tokenizer();

    RunArtifact art;
    art.config = cfg;
    art.doc_id = doc.id;
    if (!out_dir.empty()) detail::persist_config(out_dir, cfg);

    detail::LevelCollector collector(art, out_dir);

    if (cfg.baseline == Baseline::zeroshot) {
        long budget = cfg.backend.context_window - cfg.backend.max_output_tokens -
                      prompts.overhead_tokens(TemplateId::chunk_summary, tok);
        if (budget < 1) throw ConfigError("zeroshot: context window leaves no room for input");
        SummaryNode node;
        node.id = node_id(1, 0);
        node.level = 1;
        std::string truncated = truncate_to_tokens(doc.text, budget, tok);
        if (truncated.size() < doc.text.size())
            node.warnings.push_back("input truncated to " + std::to_string(budget) + " tokens");
        node.prompt = prompts.render(TemplateId::chunk_summary, {truncated});
        GenResult gen = backend.generate(GenRequest{node.prompt, node.id});
        node.summary = gen.text;
        node.raw_response = gen.text;
        detail::fill_gen(node, gen);
        art.nodes.push_back(node);
        art.journal.push_back(detail::journal_of(node.id, gen));
        if (!out_dir.empty()) {
            detail::persist_node(out_dir, node);
            detail::append_journal(out_dir, {art.journal.back()});
            detail::write_file(out_dir / "final.txt", node.summary + "\n");
        }
        art.final_summary = node.summary;
        return art;
    }

    auto chunks = chunk_document(doc, cfg.chunk_tokens, tok);
    std::vector<std::future<detail::NodeOutcome>> futures;
    for (size_t i = 0; i < chunks.size(); ++i) {
        std::string id = node_id(1, i);
        futures.push_back(std::async(std::launch::async, [&, i, id] {
            return detail::run_leaf(doc, chunks[i], id, cfg, backend, prompts);
        }));
    }
    std::vector<SummaryNode> current = collector.collect(futures);

    int level = 1;
    while (current.size() > 1) {
        MergePlan plan = plan_level(current, cfg, tok, prompts);
        if (plan.groups.size() >= current.size())
            throw ConfigError("merge level " + std::to_string(level + 1) +
                              " cannot shrink; raise merge_context_tokens");
        art.plans.push_back(plan);
        ++level;

        std::map<std::string, const SummaryNode*> by_id;
        for (const auto& n : current) by_id[n.id] = &n;

        std::vector<std::future<detail::NodeOutcome>> merge_futures;
        for (size_t g = 0; g < plan.groups.size(); ++g) {
            std::string id = node_id(level, g);
            MergeGroup group = plan.groups[g];
            std::vector<const SummaryNode*> children;
            for (const auto& cid : group.node_ids) children.push_back(by_id.at(cid));
            merge_futures.push_back(std::async(std::launch::async, [&, children, group, id, level] {
                return detail::run_merge(children, group, id, level, cfg, backend, prompts);
            }));
        }
        current = collector.collect(merge_futures);
    }

    art.final_summary = current.front().summary;
    if (!out_dir.empty()) detail::write_file(out_dir / "final.txt", art.final_summary + "\n");
    return art;
}

// ---------------------------------------------------------------------------
// Artifact rebuild
// ---------------------------------------------------------------------------

namespace detail {

inline bool parse_node_id(const std::string& id, int& level, int& index) {
    if (id.size() < 4 || id[0] != 'L') return false;
    size_t us = id.find('_');
    if (us == std::string::npos || us == 1 || us + 1 >= id.size()) return false;
    level = 0;
    for (size_t i = 1; i < us; ++i) {
        if (id[i] < '0' || id[i] > '9') return false;
        level = level * 10 + (id[i] - '0');
    }
    index = 0;
    for (size_t i = us + 1; i < id.size(); ++i) {
        if (id[i] < '0' || id[i] > '9') return false;
        index = index * 10 + (id[i] - '0');
    }
    return level >= 1;
}

} // namespace detail

// Reconstructs a persisted run. Nodes lost to an aborted run appear as
// missing markers (missing = true) so the tree stays structurally complete.
inline RunArtifact rebuild_tree(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::exists(dir / "config.json")) throw ArtifactError("no config.json in " + dir.string());

    RunArtifact art;
    {
        std::ifstream in(dir / "config.json", std::ios::binary);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ArtifactError("config.json unparseable: " + std::string(e.what()));
        }
        art.config = j.get<PipelineConfig>();
    }

    std::map<std::pair<int, int>, SummaryNode> by_pos;
    if (fs::exists(dir / "nodes")) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir / "nodes"))
            if (entry.path().extension() == ".json") files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (const auto& path : files) {
            const std::string id = path.stem().string();
            int level = 0, index = 0;
            if (!detail::parse_node_id(id, level, index)) continue;
            std::ifstream in(path, std::ios::binary);
            nlohmann::json j;
            SummaryNode node;
            try {
                in >> j;
                node = j.get<SummaryNode>();
            } catch (const nlohmann::json::exception& e) {
                throw ArtifactError("node file corrupted: " + id + " (" + e.what() + ")");
            }
            by_pos[{level, index}] = std::move(node);
        }
    }

    // fill gaps: referenced children and skipped indices become markers
    std::map<int, int> max_index;
    std::vector<std::string> referenced;
    for (const auto& [pos, node] : by_pos) {
        auto [level, index] = pos;
        auto it = max_index.find(level);
        if (it == max_index.end() || it->second < index) max_index[level] = index;
        for (const auto& cid : node.children) referenced.push_back(cid);
    }
    for (const auto& cid : referenced) {
        int level = 0, index = 0;
        if (detail::parse_node_id(cid, level, index)) {
            auto it = max_index.find(level);
            if (it == max_index.end() || it->second < index) max_index[level] = index;
        }
    }
    for (const auto& [level, max_idx] : max_index) {
        for (int i = 0; i <= max_idx; ++i) {
            if (by_pos.count({level, i})) continue;
            SummaryNode marker;
            marker.id = node_id(level, static_cast<size_t>(i));
            marker.level = level;
            marker.missing = true;
            by_pos[{level, i}] = std::move(marker);
        }
    }
    for (auto& [pos, node] : by_pos) art.nodes.push_back(std::move(node));

    if (fs::exists(dir / "journal.jsonl")) {
        std::ifstream in(dir / "journal.jsonl", std::ios::binary);
        std::string line;
        size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            try {
                art.journal.push_back(nlohmann::json::parse(line).get<JournalEntry>());
            } catch (const nlohmann::json::exception& e) {
                throw ArtifactError("journal.jsonl line " + std::to_string(line_no) + " unparseable: " +
                                    e.what());
            }
        }
    }

    if (fs::exists(dir / "final.txt")) {
        std::ifstream in(dir / "final.txt", std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        art.final_summary = ss.str();
        if (!art.final_summary.empty() && art.final_summary.back() == '\n') art.final_summary.pop_back();
    }
    art.doc_id = art.nodes.empty() || !art.nodes.front().bundle || art.nodes.front().bundle->passages.empty()
                     ? ""
                     : art.nodes.front().bundle->passages.front().origin.doc_id;
    return art;
}

// A run directory counts as complete when its final summary exists and the
// journal is intact.
inline bool run_complete(const std::filesystem::path& dir) {
    if (!std::filesystem::exists(dir / "final.txt")) return false;
    try {
        rebuild_tree(dir);
    } catch (const Error&) {
        return false;
    }
    return true;
}

} // namespace cahm
