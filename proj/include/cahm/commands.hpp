#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cahm/dataset.hpp"
#include "cahm/evaluation.hpp"
#include "cahm/pipeline.hpp"

namespace cahm {

// Dataset ids become directory names; anything outside [A-Za-z0-9._-] is
// replaced so ids like "doc/7" cannot escape the output root.
inline std::string sanitize_run_id(const std::string& id) {
    std::string out;
    for (char c : id) {
        bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '.' ||
                  c == '_' || c == '-';
        out += ok ? c : '_';
    }
    if (out.empty() || out == "." || out == "..") out = "_" + out;
    return out;
}

// ---------------------------------------------------------------------------
// summarize
// ---------------------------------------------------------------------------

struct SummarizeOptions {
    std::string dataset_path;
    std::string out_dir;
    PipelineConfig config;
    int jobs = 1;
    bool json = false;
};

// One run directory per dataset row. Completed rows (final.txt present and
// journal intact) are skipped; partial leftovers are wiped and redone. Rows
// run on up to `jobs` threads sharing one backend limiter. Returns 0 when
// every row succeeded or was skipped, 1 otherwise.
inline int run_summarize(const SummarizeOptions& opt, std::ostream& out, std::ostream& err) {
    namespace fs = std::filesystem;
    opt.config.validate();
    if (opt.jobs < 1) throw ConfigError("--jobs must be >= 1");

    auto rows = load_dataset(opt.dataset_path);
    if (rows.empty()) throw ConfigError("dataset has no rows: " + opt.dataset_path);

    std::map<std::string, std::string> dir_of;
    std::set<std::string> used;
    for (const auto& row : rows) {
        std::string name = sanitize_run_id(row.id);
        if (!used.insert(name).second)
            throw ConfigError("ids '" + row.id + "' and another row collide on run directory '" + name + "'");
        dir_of[row.id] = name;
    }
    fs::create_directories(opt.out_dir);

    PromptSet prompts =
        opt.config.prompt_dir.empty() ? PromptSet::defaults() : PromptSet::load(opt.config.prompt_dir);
    Backend backend(opt.config.backend, opt.config.tokenizer);

    struct RowResult {
        std::string status; // ok | skipped | failed
        std::string dir;
        std::string error;
    };
    std::vector<RowResult> results(rows.size());
    std::atomic<size_t> next{0};

    auto worker = [&] {
        while (true) {
            size_t i = next.fetch_add(1);
            if (i >= rows.size()) return;
            const DatasetRow& row = rows[i];
            fs::path dir = fs::path(opt.out_dir) / dir_of.at(row.id);
            RowResult& r = results[i];
            r.dir = dir.string();
            try {
                if (run_complete(dir)) {
                    r.status = "skipped";
                    continue;
                }
                fs::remove_all(dir);
                run_pipeline(row.to_document(), opt.config, backend, prompts, dir);
                r.status = "ok";
            } catch (const std::exception& e) {
                r.status = "failed";
                r.error = e.what();
            }
        }
    };
    size_t n_threads = std::min<size_t>(static_cast<size_t>(opt.jobs), rows.size());
    std::vector<std::thread> pool;
    for (size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    bool any_failed = false;
    for (size_t i = 0; i < rows.size(); ++i) {
        const auto& r = results[i];
        if (opt.json) {
            nlohmann::json j = {{"id", rows[i].id}, {"status", r.status}, {"dir", r.dir}};
            if (!r.error.empty()) j["error"] = r.error;
            out << j.dump() << "\n";
        } else {
            out << rows[i].id << "\t" << r.status << "\t" << r.dir << "\n";
        }
        if (r.status == "failed") {
            any_failed = true;
            err << "row '" << rows[i].id << "' failed: " << r.error << "\n";
        }
    }
    return any_failed ? 1 : 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOptions {
    std::string runs_dir;
    std::string dataset_path;
    std::string report_path;  // default <runs_dir>/report.json
    std::string export_path;  // default <runs_dir>/neural_export.jsonl
    bool json = false;
};

inline int run_eval(const EvalOptions& opt, std::ostream& out, std::ostream& err) {
    namespace fs = std::filesystem;
    auto rows = load_dataset(opt.dataset_path);
    if (!fs::exists(opt.runs_dir)) throw ConfigError("runs directory missing: " + opt.runs_dir);
    fs::path report_path = opt.report_path.empty() ? fs::path(opt.runs_dir) / "report.json"
                                                   : fs::path(opt.report_path);
    fs::path export_path = opt.export_path.empty() ? fs::path(opt.runs_dir) / "neural_export.jsonl"
                                                   : fs::path(opt.export_path);

    nlohmann::json row_reports = nlohmann::json::array();
    nlohmann::json excluded = nlohmann::json::array();
    std::ofstream exp(export_path, std::ios::binary | std::ios::trunc);
    if (!exp) throw ConfigError("cannot write export file: " + export_path.string());

    double m_r1 = 0, m_r2 = 0, m_rl = 0, m_geo = 0;
    long included = 0;
    for (const auto& row : rows) {
        fs::path dir = fs::path(opt.runs_dir) / sanitize_run_id(row.id);
        if (!run_complete(dir)) {
            excluded.push_back({{"id", row.id}, {"reason", "run incomplete or missing"}});
            continue;
        }
        std::ifstream fin(dir / "final.txt", std::ios::binary);
        std::ostringstream ss;
        ss << fin.rdbuf();
        std::string candidate = ss.str();
        if (!candidate.empty() && candidate.back() == '\n') candidate.pop_back();

        exp << export_row_json(ExportRow{row.id, row.document, candidate, row.reference_summary}).dump()
            << "\n";
        if (!row.reference_summary) {
            err << "row '" << row.id << "' has no reference summary; exported with null reference\n";
            excluded.push_back({{"id", row.id}, {"reason", "no reference summary"}});
            continue;
        }
        RougeReport rep = rouge(candidate, *row.reference_summary);
        row_reports.push_back({{"id", row.id}, {"rouge", rep}});
        m_r1 += rep.r1.f1;
        m_r2 += rep.r2.f1;
        m_rl += rep.rl.f1;
        m_geo += rep.geometric_mean_f1;
        ++included;
    }
    if (included == 0) throw Error("no completed runs with references to evaluate under " + opt.runs_dir);

    nlohmann::json report = {
        {"rows", row_reports},
        {"excluded", excluded},
        {"evaluated", included},
        {"means",
         {{"r1_f1", m_r1 / included},
          {"r2_f1", m_r2 / included},
          {"rl_f1", m_rl / included},
          {"geometric_mean_f1", m_geo / included}}},
    };
    detail::write_file(report_path, report.dump(2) + "\n");

    if (opt.json) {
        out << report.dump(2) << "\n";
    } else {
        out << "evaluated " << included << "/" << rows.size() << " rows\n";
        out << "mean R1 F1 " << report["means"]["r1_f1"].get<double>() << ", R2 F1 "
            << report["means"]["r2_f1"].get<double>() << ", RL F1 " << report["means"]["rl_f1"].get<double>()
            << ", geometric mean " << report["means"]["geometric_mean_f1"].get<double>() << "\n";
        out << "report: " << report_path.string() << "\n";
        out << "export: " << export_path.string() << "\n";
        for (const auto& e : excluded)
            out << "excluded: " << e["id"].get<std::string>() << " (" << e["reason"].get<std::string>()
                << ")\n";
    }
    return excluded.empty() ? 0 : 1;
}

// ---------------------------------------------------------------------------
// inspect
// ---------------------------------------------------------------------------

struct InspectOptions {
    std::string run_dir;
    std::string node; // empty = overview
    bool json = false;
};

namespace detail {

inline std::string preview(const std::string& text, size_t cap = 100) {
    if (text.size() <= cap) return text;
    size_t cut = cap;
    while (cut > 0 && is_utf8_continuation(static_cast<unsigned char>(text[cut]))) --cut;
    return text.substr(0, cut) + "...";
}

} // namespace detail

inline int run_inspect(const InspectOptions& opt, std::ostream& out) {
    RunArtifact art = rebuild_tree(opt.run_dir);

    if (!opt.node.empty()) {
        const SummaryNode* node = art.find(opt.node);
        if (!node) throw ConfigError("unknown node id: " + opt.node);
        if (opt.json) {
            out << nlohmann::json(*node).dump(2) << "\n";
            return 0;
        }
        out << "node " << node->id << " (level " << node->level << ")\n";
        if (node->missing) {
            out << "status: missing (not persisted; run was aborted)\n";
            return 0;
        }
        if (!node->children.empty()) {
            out << "children:";
            for (const auto& c : node->children) out << " " << c;
            out << "\n";
        }
        out << "prompt tokens: " << node->prompt_tokens << ", output tokens: " << node->output_tokens
            << "\n";
        out << "summary:\n" << node->summary << "\n";
        if (node->bundle) {
            const auto& b = *node->bundle;
            out << "bundle (" << to_string(b.strategy) << ", " << b.passages.size() << " passages, "
                << b.total_tokens() << " tokens):\n";
            for (size_t i = 0; i < b.passages.size(); ++i) {
                const auto& p = b.passages[i];
                out << "  [" << p.label << "] score=" << b.score_trace[i] << " span=" << p.origin.begin
                    << ".." << p.origin.end << " \"" << detail::preview(p.text) << "\"\n";
            }
        }
        for (const auto& d : node->diagnostics) out << "diagnostic: " << d << "\n";
        for (const auto& w : node->warnings) out << "warning: " << w << "\n";
        return 0;
    }

    auto sizes = art.level_sizes();
    size_t missing = 0;
    long prompt_total = 0, output_total = 0;
    for (const auto& n : art.nodes) {
        if (n.missing) ++missing;
        prompt_total += n.prompt_tokens;
        output_total += n.output_tokens;
    }
    if (opt.json) {
        nlohmann::json j = {{"levels", sizes},
                            {"nodes", art.nodes.size()},
                            {"missing", missing},
                            {"calls", art.journal.size()},
                            {"prompt_tokens", prompt_total},
                            {"output_tokens", output_total},
                            {"final_summary", art.final_summary},
                            {"config", art.config}};
        out << j.dump(2) << "\n";
        return 0;
    }
    out << "run: " << opt.run_dir << "\n";
    if (art.config.baseline) out << "baseline: " << to_string(*art.config.baseline) << "\n";
    if (art.config.strategy && art.config.mode)
        out << "variant: " << to_string(*art.config.strategy) << "-" << to_string(*art.config.mode) << "\n";
    out << "levels:";
    for (size_t l = 0; l < sizes.size(); ++l) out << " L" << (l + 1) << "=" << sizes[l];
    out << "\n";
    out << "nodes: " << art.nodes.size() << " (" << missing << " missing)\n";
    out << "backend calls: " << art.journal.size() << ", prompt tokens: " << prompt_total
        << ", output tokens: " << output_total << "\n";
    if (!art.final_summary.empty()) out << "final summary:\n" << art.final_summary << "\n";
    return 0;
}

} // namespace cahm
