#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cahm/commands.hpp"

namespace {

struct PipelineFlags {
    cahm::PipelineConfig cfg;
    std::string strategy;
    std::string mode;
    std::string baseline;
    std::string backend_kind = "mock";
    std::string mock_style = "echo-head";
    std::string tokenizer_scheme = "byte-approx";
    std::string vocab_path;
};

void add_pipeline_flags(CLI::App* cmd, PipelineFlags& f) {
    cmd->add_option("--strategy", f.strategy, "Context strategy: extract, retrieve, cite");
    cmd->add_option("--mode", f.mode, "Merge mode: replace, support");
    cmd->add_option("--baseline", f.baseline, "Baseline: zeroshot, hmerge, cite-hmerge");
    cmd->add_option("--chunk-tokens", f.cfg.chunk_tokens, "Chunk size in tokens")->capture_default_str();
    cmd->add_option("--merge-context-tokens", f.cfg.merge_context_tokens,
                    "Token ceiling on one merge call's input")
        ->capture_default_str();
    cmd->add_option("--passage-tokens", f.cfg.passage_tokens, "Passage size in tokens")
        ->capture_default_str();
    cmd->add_option("--target-context-tokens", f.cfg.target_context_tokens,
                    "Token budget for each node's context bundle")
        ->capture_default_str();
    cmd->add_option("--top-k", f.cfg.top_k, "Passages per bundle (0 derives it from the token budget)")
        ->capture_default_str();
    cmd->add_option("--max-extract-sentences", f.cfg.max_extract_sentences,
                    "Sentence cap for the extract strategy")
        ->capture_default_str();
    cmd->add_option("--bm25-k1", f.cfg.bm25_k1, "BM25 k1")->capture_default_str();
    cmd->add_option("--bm25-b", f.cfg.bm25_b, "BM25 b")->capture_default_str();
    cmd->add_option("--prompt-dir", f.cfg.prompt_dir,
                    "Directory of prompt template .txt files (default: compiled-in templates)");
    cmd->add_option("--tokenizer", f.tokenizer_scheme,
                    "Token counting scheme: byte-approx, whitespace-words, external-vocab")
        ->capture_default_str();
    cmd->add_option("--vocab-path", f.vocab_path, "Word list for the external-vocab tokenizer");
    cmd->add_option("--backend", f.backend_kind, "Generation backend: http, mock")->capture_default_str();
    cmd->add_option("--mock-style", f.mock_style, "Mock behavior: echo-head, cite-all, cite-subset")
        ->capture_default_str();
    cmd->add_option("--mock-head-sentences", f.cfg.backend.mock_head_sentences,
                    "Sentences echoed by the echo-head mock")
        ->capture_default_str();
    cmd->add_option("--base-url", f.cfg.backend.base_url, "Chat-completions endpoint base URL")
        ->capture_default_str();
    cmd->add_option("--model", f.cfg.backend.model, "Model name sent to the backend")
        ->capture_default_str();
    cmd->add_option("--api-key-env", f.cfg.backend.api_key_env,
                    "Environment variable holding the API key")
        ->capture_default_str();
    cmd->add_option("--context-window", f.cfg.backend.context_window,
                    "Model context window in tokens (pre-flight ceiling)")
        ->capture_default_str();
    cmd->add_option("--max-output-tokens", f.cfg.backend.max_output_tokens, "Generation length cap")
        ->capture_default_str();
    cmd->add_option("--temperature", f.cfg.backend.temperature, "Sampling temperature")
        ->capture_default_str();
    cmd->add_option("--timeout", f.cfg.backend.request_timeout_s, "Per-request timeout in seconds")
        ->capture_default_str();
    cmd->add_option("--max-retries", f.cfg.backend.max_retries, "Retries for 5xx/timeouts")
        ->capture_default_str();
    cmd->add_option("--retry-base-delay-ms", f.cfg.backend.retry_base_delay_ms,
                    "First retry delay; doubles per attempt")
        ->capture_default_str();
    cmd->add_option("--parallelism", f.cfg.backend.parallelism, "Max in-flight backend requests")
        ->capture_default_str();
}

cahm::PipelineConfig resolve(const PipelineFlags& f) {
    cahm::PipelineConfig cfg = f.cfg;
    if (!f.strategy.empty()) cfg.strategy = cahm::strategy_from_string(f.strategy);
    if (!f.mode.empty()) cfg.mode = cahm::mode_from_string(f.mode);
    if (!f.baseline.empty()) cfg.baseline = cahm::baseline_from_string(f.baseline);
    cfg.backend.kind = cahm::backend_kind_from_string(f.backend_kind);
    cfg.backend.mock_style = cahm::mock_style_from_string(f.mock_style);
    cfg.tokenizer.scheme = cahm::token_scheme_from_string(f.tokenizer_scheme);
    cfg.tokenizer.vocab_path = f.vocab_path;
    cfg.validate();
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical merging summarization with context augmentation"};
    app.require_subcommand(1);

    cahm::SummarizeOptions sopt;
    PipelineFlags flags;
    auto* sum = app.add_subcommand("summarize", "Run the pipeline over a JSONL dataset");
    sum->add_option("dataset", sopt.dataset_path, "JSONL dataset file")->required();
    sum->add_option("out_dir", sopt.out_dir, "Directory receiving one run dir per row")->required();
    add_pipeline_flags(sum, flags);
    sum->add_option("--jobs", sopt.jobs, "Rows processed in parallel")->capture_default_str();
    sum->add_flag("--json", sopt.json, "Machine-readable per-row result lines");

    cahm::EvalOptions eopt;
    auto* ev = app.add_subcommand("eval", "Score completed runs against reference summaries");
    ev->add_option("runs_dir", eopt.runs_dir, "Directory produced by summarize")->required();
    ev->add_option("dataset", eopt.dataset_path, "JSONL dataset file with references")->required();
    ev->add_option("--report", eopt.report_path, "Report path (default <runs_dir>/report.json)");
    ev->add_option("--export", eopt.export_path,
                   "Neural-metric export path (default <runs_dir>/neural_export.jsonl)");
    ev->add_flag("--json", eopt.json, "Print the full report as JSON");

    cahm::InspectOptions iopt;
    auto* insp = app.add_subcommand("inspect", "Show a run's tree, or one node in detail");
    insp->add_option("run_dir", iopt.run_dir, "Run directory")->required();
    insp->add_option("--node", iopt.node, "Node id, e.g. L2_001");
    insp->add_flag("--json", iopt.json, "Machine-readable dump");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (sum->parsed()) {
            sopt.config = resolve(flags);
            return cahm::run_summarize(sopt, std::cout, std::cerr);
        }
        if (ev->parsed()) return cahm::run_eval(eopt, std::cout, std::cerr);
        if (insp->parsed()) return cahm::run_inspect(iopt, std::cout);
    } catch (const cahm::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
