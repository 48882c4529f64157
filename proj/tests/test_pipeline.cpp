#include <catch2/catch_amalgamated.hpp>

#include <regex>

#include "cahm/pipeline.hpp"
#include "helpers.hpp"

using namespace cahm;
using testutil::TempDir;

namespace {

TokenizerSpec words() { return TokenizerSpec{TokenScheme::whitespace_words, ""}; }

PipelineConfig base_config() {
    PipelineConfig cfg;
    cfg.tokenizer = words();
    cfg.backend.kind = BackendKind::mock;
    cfg.backend.mock_style = MockStyle::echo_head;
    cfg.backend.mock_head_sentences = 3;
    return cfg;
}

// 10-word sentences; chunk_tokens=100 cuts every 10 sentences exactly.
Document prose_doc(const std::string& id, int sentences) {
    return Document{id, testutil::make_prose(sentences, 10), {}, {}};
}

PipelineConfig hmerge_config(const PromptSet& prompts) {
    PipelineConfig cfg = base_config();
    cfg.baseline = Baseline::hmerge;
    cfg.chunk_tokens = 100;
    // exactly two 30-token summaries fit a merge; a third does not
    Tokenizer tok{cfg.tokenizer};
    cfg.merge_context_tokens = prompts.overhead_tokens(TemplateId::merge_plain, tok) + 30;
    return cfg;
}

SummaryNode stub_node(const std::string& id, const std::string& summary) {
    SummaryNode n;
    n.id = id;
    n.level = 1;
    n.summary = summary;
    return n;
}

} // namespace

TEST_CASE("config validation enforces exactly one of baseline or strategy+mode") {
    PipelineConfig cfg = base_config();
    REQUIRE_THROWS_AS(cfg.validate(), ConfigError); // neither

    cfg.baseline = Baseline::hmerge;
    REQUIRE_NOTHROW(cfg.validate());

    cfg.strategy = Strategy::retrieve;
    REQUIRE_THROWS_AS(cfg.validate(), ConfigError); // both

    cfg.baseline.reset();
    REQUIRE_THROWS_AS(cfg.validate(), ConfigError); // strategy without mode

    cfg.mode = Mode::support;
    REQUIRE_NOTHROW(cfg.validate());

    cfg.chunk_tokens = 63;
    REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
    cfg.chunk_tokens = 8000;
    cfg.merge_context_tokens = 10;
    REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("mode and baseline names round-trip") {
    REQUIRE(mode_from_string(to_string(Mode::replace)) == Mode::replace);
    REQUIRE(mode_from_string(to_string(Mode::support)) == Mode::support);
    for (auto b : {Baseline::zeroshot, Baseline::hmerge, Baseline::cite_hmerge})
        REQUIRE(baseline_from_string(to_string(b)) == b);
    REQUIRE(to_string(Baseline::cite_hmerge) == "cite-hmerge");
    REQUIRE_THROWS_AS(mode_from_string("hybrid"), ConfigError);
    REQUIRE_THROWS_AS(baseline_from_string("none"), ConfigError);
}

TEST_CASE("node ids are zero-padded and parseable") {
    REQUIRE(node_id(1, 0) == "L1_000");
    REQUIRE(node_id(3, 42) == "L3_042");
    REQUIRE(node_id(2, 1234) == "L2_1234");
    int level = 0, index = 0;
    REQUIRE(detail::parse_node_id("L3_042", level, index));
    REQUIRE(level == 3);
    REQUIRE(index == 42);
    REQUIRE_FALSE(detail::parse_node_id("X1_000", level, index));
    REQUIRE_FALSE(detail::parse_node_id("L1", level, index));
    REQUIRE_FALSE(detail::parse_node_id("L1_0a0", level, index));
}

TEST_CASE("merge planning packs greedily left to right") {
    auto prompts = PromptSet::defaults();
    PipelineConfig cfg = hmerge_config(prompts);
    Tokenizer tok{cfg.tokenizer};

    std::vector<SummaryNode> nodes;
    for (int i = 0; i < 5; ++i) nodes.push_back(stub_node(node_id(1, i), testutil::make_words(30)));

    MergePlan plan = plan_level(nodes, cfg, tok, prompts);
    REQUIRE(plan.groups.size() == 3);
    REQUIRE(plan.groups[0].node_ids == std::vector<std::string>{"L1_000", "L1_001"});
    REQUIRE(plan.groups[1].node_ids == std::vector<std::string>{"L1_002", "L1_003"});
    REQUIRE(plan.groups[2].node_ids == std::vector<std::string>{"L1_004"});
    REQUIRE(plan.groups[0].planned_tokens == 60);
    REQUIRE(plan.groups[2].planned_tokens == 30);
    for (const auto& g : plan.groups) REQUIRE_FALSE(g.pass_through);
}

TEST_CASE("oversized nodes become pass-through groups") {
    auto prompts = PromptSet::defaults();
    PipelineConfig cfg = hmerge_config(prompts);
    Tokenizer tok{cfg.tokenizer};

    std::vector<SummaryNode> nodes;
    nodes.push_back(stub_node("L1_000", testutil::make_words(500)));
    nodes.push_back(stub_node("L1_001", testutil::make_words(20)));
    nodes.push_back(stub_node("L1_002", testutil::make_words(20)));

    MergePlan plan = plan_level(nodes, cfg, tok, prompts);
    REQUIRE(plan.groups.size() == 2);
    REQUIRE(plan.groups[0].pass_through);
    REQUIRE(plan.groups[0].node_ids == std::vector<std::string>{"L1_000"});
    REQUIRE(plan.groups[0].planned_tokens == 500);
    REQUIRE_FALSE(plan.groups[1].pass_through);
    REQUIRE(plan.groups[1].node_ids.size() == 2);
}

TEST_CASE("pass-through merges copy the child without calling the backend") {
    auto prompts = PromptSet::defaults();
    PipelineConfig cfg = hmerge_config(prompts);
    Backend backend(cfg.backend, cfg.tokenizer);

    SummaryNode child = stub_node("L1_000", "A very long summary that exceeded the budget.");
    child.bundle = ContextBundle{};
    MergeGroup group{{"L1_000"}, 500, true};
    auto outcome = detail::run_merge({&child}, group, "L2_000", 2, cfg, backend, prompts);

    REQUIRE_FALSE(outcome.call.has_value());
    REQUIRE(outcome.node.summary == child.summary);
    REQUIRE(outcome.node.bundle.has_value());
    REQUIRE(outcome.node.children == std::vector<std::string>{"L1_000"});
    REQUIRE(outcome.node.warnings.size() == 1);
    REQUIRE(outcome.node.warnings[0].find("passed through") != std::string::npos);
}

TEST_CASE("plain hierarchical merging reduces 5 chunks over three levels") {
    auto prompts = PromptSet::defaults();
    PipelineConfig cfg = hmerge_config(prompts);
    Backend backend(cfg.backend, cfg.tokenizer);
    Document doc = prose_doc("five", 50); // 500 words -> 5 chunks of 10 sentences

    RunArtifact art = run_pipeline(doc, cfg, backend, prompts);
    REQUIRE(art.level_sizes() == std::vector<size_t>{5, 3, 2, 1});
    REQUIRE(art.nodes.size() == 11);
    REQUIRE(art.journal.size() == 11); // every node called the backend
    REQUIRE(art.plans.size() == 3);
    REQUIRE(art.final_summary == art.nodes.back().summary);
    REQUIRE(!art.final_summary.empty());

    const SummaryNode* merged = art.find("L2_000");
    REQUIRE(merged != nullptr);
    REQUIRE(merged->children == std::vector<std::string>{"L1_000", "L1_001"});
    REQUIRE(merged->prompt.find(art.find("L1_000")->summary) != std::string::npos);
    for (const auto& e : art.journal) REQUIRE(e.prompt_tokens > 0);
}

TEST_CASE("a document fitting one chunk needs no merge levels") {
    auto prompts = PromptSet::defaults();
    PipelineConfig cfg = hmerge_config(prompts);
    Backend backend(cfg.backend, cfg.tokenizer);

    RunArtifact art = run_pipeline(prose_doc("tiny", 5), cfg, backend, prompts);
    REQUIRE(art.level_sizes() == std::vector<size_t>{1});
    REQUIRE(art.plans.empty());
    REQUIRE(art.journal.size() == 1);
    REQUIRE(art.final_summary == art.nodes[0].summary);
}

TEST_CASE("merging fails loudly when the budget cannot shrink the tree") {
    auto prompts = PromptSet::defaults();
    PipelineConfig cfg = base_config();
    cfg.baseline = Baseline::hmerge;
    cfg.chunk_tokens = 100;
    cfg.merge_context_tokens = 64;
    cfg.backend.mock_head_sentences = 10; // 100-token summaries dwarf the 64-token budget
    Backend backend(cfg.backend, cfg.tokenizer);

    REQUIRE_THROWS_AS(run_pipeline(prose_doc("stuck", 20), cfg, backend, prompts), ConfigError);
}

TEST_CASE("empty documents are rejected up front") {
    auto prompts = PromptSet::defaults();
    PipelineConfig cfg = hmerge_config(prompts);
    Backend backend(cfg.backend, cfg.tokenizer);
    REQUIRE_THROWS_AS(run_pipeline(Document{"none", "", {}, {}}, cfg, backend, prompts), ConfigError);
}

TEST_CASE("zeroshot truncates once and answers with a single call") {
    auto prompts = PromptSet::defaults();
    PipelineConfig cfg = base_config();
    cfg.baseline = Baseline::zeroshot;
    cfg.backend.context_window = 100;
    cfg.backend.max_output_tokens = 50;
    Backend backend(cfg.backend, cfg.tokenizer);
    Tokenizer tok{cfg.tokenizer};

    Document doc = prose_doc("zs", 6); // 60 words, budget is 100 - 50 - overhead
    long budget = cfg.backend.context_window - cfg.backend.max_output_tokens -
                  prompts.overhead_tokens(TemplateId::chunk_summary, tok);
    REQUIRE(budget > 0);
    REQUIRE(tok.count(doc.text) > budget);

    RunArtifact art = run_pipeline(doc, cfg, backend, prompts);
    REQUIRE(art.nodes.size() == 1);
    REQUIRE(art.journal.size() == 1);
    REQUIRE(art.plans.empty());
    REQUIRE(art.nodes[0].warnings.size() == 1);
    REQUIRE(art.nodes[0].warnings[0].find("truncated") != std::string::npos);

    // the fenced document is a prefix of the original within budget
    const std::string& prompt = art.nodes[0].prompt;
    size_t begin = prompt.find("---\n") + 4;
    size_t end = prompt.find("\n---", begin);
    std::string fenced = prompt.substr(begin, end - begin);
    REQUIRE(doc.text.substr(0, fenced.size()) == fenced);
    REQUIRE(tok.count(fenced) <= budget);
}

TEST_CASE("zeroshot refuses a window smaller than the template") {
    auto prompts = PromptSet::defaults();
    PipelineConfig cfg = base_config();
    cfg.baseline = Baseline::zeroshot;
    cfg.backend.context_window = 60;
    cfg.backend.max_output_tokens = 50;
    Backend backend(cfg.backend, cfg.tokenizer);
    REQUIRE_THROWS_AS(run_pipeline(prose_doc("zs2", 5), cfg, backend, prompts), ConfigError);
}

TEST_CASE("citation merging relabels child summaries and strips markers") {
    auto prompts = PromptSet::defaults();
    PipelineConfig cfg = base_config();
    cfg.baseline = Baseline::cite_hmerge;
    cfg.chunk_tokens = 100;
    cfg.passage_tokens = 20;
    cfg.merge_context_tokens = 2000;
    cfg.backend.mock_style = MockStyle::cite_all;
    Backend backend(cfg.backend, cfg.tokenizer);

    Document doc = prose_doc("cite", 30); // 3 chunks
    RunArtifact art = run_pipeline(doc, cfg, backend, prompts);
    REQUIRE(art.level_sizes() == std::vector<size_t>{3, 1});

    std::regex marker(R"(\[\d+\])");
    for (const auto& n : art.nodes) {
        REQUIRE_FALSE(std::regex_search(n.summary, marker));
        REQUIRE(std::regex_search(n.raw_response, marker));
    }
    const SummaryNode* root = art.find("L2_000");
    REQUIRE(root != nullptr);
    REQUIRE(root->prompt.find(" [1]\n") != std::string::npos);
    REQUIRE(root->prompt.find(" [3]") != std::string::npos);
    // the labeled items in the merge prompt are the children's clean summaries
    REQUIRE(root->prompt.find(art.find("L1_000")->summary + " [1]") != std::string::npos);
    REQUIRE(root->prompt.find(art.find("L1_002")->summary + " [3]") != std::string::npos);
}

TEST_CASE("replace mode re-selects passages whose spans stay verbatim") {
    auto prompts = PromptSet::defaults();
    PipelineConfig cfg = base_config();
    cfg.strategy = Strategy::retrieve;
    cfg.mode = Mode::replace;
    cfg.chunk_tokens = 100;
    cfg.passage_tokens = 10;
    cfg.target_context_tokens = 30; // top_k = 3
    cfg.merge_context_tokens = 2000;
    Backend backend(cfg.backend, cfg.tokenizer);

    Document doc = prose_doc("rep", 30);
    RunArtifact art = run_pipeline(doc, cfg, backend, prompts);
    REQUIRE(art.level_sizes().size() == 2);

    for (const auto& n : art.nodes) {
        REQUIRE(n.bundle.has_value());
        REQUIRE(n.bundle->passages.size() <= 3);
        for (const auto& p : n.bundle->passages) {
            REQUIRE(p.origin.doc_id == doc.id);
            REQUIRE(doc.text.substr(p.origin.begin, p.origin.end - p.origin.begin) == p.text);
        }
    }

    // the merge document block is the children's passages joined by single spaces
    const SummaryNode* root = art.find("L2_000");
    REQUIRE(root != nullptr);
    std::string joined;
    for (const auto& cid : root->children) {
        for (const auto& p : art.find(cid)->bundle->passages) {
            if (!joined.empty()) joined += ' ';
            joined += p.text;
        }
    }
    REQUIRE(root->prompt.find("---\n" + joined + "\n---") != std::string::npos);
}

TEST_CASE("support mode packs summaries and truncates evidence to fit") {
    auto prompts = PromptSet::defaults();
    PipelineConfig cfg = base_config();
    cfg.strategy = Strategy::retrieve;
    cfg.mode = Mode::support;
    cfg.chunk_tokens = 64;
    cfg.passage_tokens = 10;
    cfg.target_context_tokens = 30; // top_k = 3
    cfg.backend.mock_head_sentences = 2;
    Backend backend(cfg.backend, cfg.tokenizer);
    Tokenizer tok{cfg.tokenizer};
    long overhead = prompts.overhead_tokens(TemplateId::merge_support, tok);
    cfg.merge_context_tokens = overhead + 4 * 20 + 30; // all summaries plus ~3 passages

    Document doc = prose_doc("sup", 20); // 4 chunks of 6,6,6,2 sentences
    RunArtifact art = run_pipeline(doc, cfg, backend, prompts);

    auto sizes = art.level_sizes();
    REQUIRE(sizes[0] == 4);
    REQUIRE(sizes.back() == 1);
    const SummaryNode* root = art.find(node_id(static_cast<int>(sizes.size()), 0));
    REQUIRE(root != nullptr);

    // both fenced blocks present, summaries before evidence
    size_t first = root->prompt.find("---\n");
    size_t second = root->prompt.find("---\n", first + 4);
    REQUIRE(second != std::string::npos);
    for (const auto& cid : root->children)
        REQUIRE(root->prompt.find(art.find(cid)->summary) != std::string::npos);

    bool truncated = false;
    for (const auto& n : art.nodes)
        for (const auto& w : n.warnings) truncated = truncated || w.find("dropped") != std::string::npos;
    REQUIRE(truncated);

    for (const auto& n : art.nodes) {
        REQUIRE(n.bundle.has_value());
        for (const auto& p : n.bundle->passages)
            REQUIRE(doc.text.substr(p.origin.begin, p.origin.end - p.origin.begin) == p.text);
    }
}

TEST_CASE("support merges select the next bundle with the merged summary as query") {
    auto prompts = PromptSet::defaults();
    PipelineConfig cfg = base_config();
    cfg.strategy = Strategy::retrieve;
    cfg.mode = Mode::support;
    cfg.chunk_tokens = 100;
    cfg.passage_tokens = 10;
    cfg.target_context_tokens = 30;
    cfg.merge_context_tokens = 4000;
    Backend backend(cfg.backend, cfg.tokenizer);

    Document doc = prose_doc("supq", 20);
    RunArtifact art = run_pipeline(doc, cfg, backend, prompts);
    auto sizes = art.level_sizes();
    const SummaryNode* root = art.find(node_id(static_cast<int>(sizes.size()), 0));
    REQUIRE(root != nullptr);
    REQUIRE(root->bundle.has_value());

    std::vector<Passage> all;
    for (const auto& cid : root->children)
        for (const auto& p : art.find(cid)->bundle->passages) all.push_back(p);
    for (size_t i = 0; i < all.size(); ++i) all[i].label = static_cast<int>(i) + 1;
    auto expected = retrieve_select(root->summary, all, cfg.selection());

    REQUIRE(root->bundle->passages.size() == expected.passages.size());
    for (size_t i = 0; i < expected.passages.size(); ++i)
        REQUIRE(root->bundle->passages[i].text == expected.passages[i].text);
}

TEST_CASE("cite support prompts label the kept evidence and round-trip citations") {
    auto prompts = PromptSet::defaults();
    PipelineConfig cfg = base_config();
    cfg.strategy = Strategy::cite;
    cfg.mode = Mode::support;
    cfg.chunk_tokens = 100;
    cfg.passage_tokens = 10;
    cfg.target_context_tokens = 30;
    cfg.merge_context_tokens = 4000;
    cfg.backend.mock_style = MockStyle::cite_all;
    Backend backend(cfg.backend, cfg.tokenizer);

    Document doc = prose_doc("csup", 30);
    RunArtifact art = run_pipeline(doc, cfg, backend, prompts);
    auto sizes = art.level_sizes();
    const SummaryNode* root = art.find(node_id(static_cast<int>(sizes.size()), 0));
    REQUIRE(root != nullptr);

    REQUIRE(root->prompt.find(" [1]\n") != std::string::npos);
    std::regex marker(R"(\[\d+\])");
    REQUIRE_FALSE(std::regex_search(root->summary, marker));
    REQUIRE(root->bundle.has_value());
    REQUIRE(!root->bundle->passages.empty());
    REQUIRE(root->bundle->strategy == Strategy::cite);
    for (const auto& p : root->bundle->passages)
        REQUIRE(doc.text.substr(p.origin.begin, p.origin.end - p.origin.begin) == p.text);
}

TEST_CASE("runs persist and rebuild losslessly") {
    auto prompts = PromptSet::defaults();
    PipelineConfig cfg = hmerge_config(prompts);
    Backend backend(cfg.backend, cfg.tokenizer);
    TempDir dir("persist");

    RunArtifact live = run_pipeline(prose_doc("persist", 50), cfg, backend, prompts, dir.path);
    REQUIRE(run_complete(dir.path));

    RunArtifact re = rebuild_tree(dir.path);
    REQUIRE(re.config == cfg);
    REQUIRE(re.nodes.size() == live.nodes.size());
    REQUIRE(re.journal.size() == live.journal.size());
    REQUIRE(re.final_summary == live.final_summary);
    for (const auto& n : live.nodes) {
        const SummaryNode* r = re.find(n.id);
        REQUIRE(r != nullptr);
        REQUIRE(r->summary == n.summary);
        REQUIRE(r->children == n.children);
        REQUIRE_FALSE(r->missing);
    }
    for (size_t i = 0; i < live.journal.size(); ++i) {
        REQUIRE(re.journal[i].tag == live.journal[i].tag);
        REQUIRE(re.journal[i].prompt_tokens == live.journal[i].prompt_tokens);
    }
}

TEST_CASE("rebuild marks deleted nodes missing instead of failing") {
    auto prompts = PromptSet::defaults();
    PipelineConfig cfg = hmerge_config(prompts);
    Backend backend(cfg.backend, cfg.tokenizer);
    TempDir dir("gap");

    run_pipeline(prose_doc("gap", 50), cfg, backend, prompts, dir.path);
    std::filesystem::remove(dir.path / "nodes" / "L1_002.json");

    RunArtifact re = rebuild_tree(dir.path);
    const SummaryNode* gone = re.find("L1_002");
    REQUIRE(gone != nullptr);
    REQUIRE(gone->missing);
    REQUIRE(gone->summary.empty());
    size_t missing = 0;
    for (const auto& n : re.nodes) missing += n.missing ? 1 : 0;
    REQUIRE(missing == 1);
}

TEST_CASE("rebuild reports corrupted node files by id") {
    auto prompts = PromptSet::defaults();
    PipelineConfig cfg = hmerge_config(prompts);
    Backend backend(cfg.backend, cfg.tokenizer);
    TempDir dir("corrupt");

    run_pipeline(prose_doc("corrupt", 50), cfg, backend, prompts, dir.path);
    testutil::write_file(dir.path / "nodes" / "L2_001.json", "{not json");

    try {
        rebuild_tree(dir.path);
        FAIL("expected ArtifactError");
    } catch (const ArtifactError& e) {
        REQUIRE(std::string(e.what()).find("L2_001") != std::string::npos);
    }
    REQUIRE_FALSE(run_complete(dir.path));
}

TEST_CASE("rebuild rejects unknown schema versions") {
    auto prompts = PromptSet::defaults();
    PipelineConfig cfg = hmerge_config(prompts);
    Backend backend(cfg.backend, cfg.tokenizer);
    TempDir dir("schema");

    run_pipeline(prose_doc("schema", 20), cfg, backend, prompts, dir.path);
    auto cfg_path = dir.path / "config.json";
    auto j = nlohmann::json::parse(testutil::read_file(cfg_path));
    j["schema_version"] = 99;
    testutil::write_file(cfg_path, j.dump(2) + "\n");

    REQUIRE_THROWS_AS(rebuild_tree(dir.path), ArtifactError);
    REQUIRE_FALSE(run_complete(dir.path));
}

TEST_CASE("a run directory without final.txt is incomplete") {
    auto prompts = PromptSet::defaults();
    PipelineConfig cfg = hmerge_config(prompts);
    Backend backend(cfg.backend, cfg.tokenizer);
    TempDir dir("nofinal");

    run_pipeline(prose_doc("nofinal", 20), cfg, backend, prompts, dir.path);
    std::filesystem::remove(dir.path / "final.txt");
    REQUIRE_FALSE(run_complete(dir.path));
    REQUIRE_FALSE(run_complete(dir.path / "never-existed"));
}

TEST_CASE("identical configurations reproduce byte-identical artifacts") {
    auto prompts = PromptSet::defaults();
    PipelineConfig cfg = base_config();
    cfg.strategy = Strategy::cite;
    cfg.mode = Mode::support;
    cfg.chunk_tokens = 100;
    cfg.passage_tokens = 10;
    cfg.target_context_tokens = 30;
    cfg.merge_context_tokens = 4000;
    cfg.backend.mock_style = MockStyle::cite_subset;
    TempDir d1("det1"), d2("det2");

    Document doc = prose_doc("det", 40);
    {
        Backend b(cfg.backend, cfg.tokenizer);
        run_pipeline(doc, cfg, b, prompts, d1.path);
    }
    {
        Backend b(cfg.backend, cfg.tokenizer);
        run_pipeline(doc, cfg, b, prompts, d2.path);
    }

    REQUIRE(testutil::read_file(d1.path / "config.json") == testutil::read_file(d2.path / "config.json"));
    REQUIRE(testutil::read_file(d1.path / "final.txt") == testutil::read_file(d2.path / "final.txt"));
    for (const auto& entry : std::filesystem::directory_iterator(d1.path / "nodes")) {
        auto name = entry.path().filename();
        REQUIRE(testutil::read_file(entry.path()) == testutil::read_file(d2.path / "nodes" / name));
    }

    auto strip_latency = [](const std::string& text) {
        std::vector<std::string> out;
        std::istringstream in(text);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto j = nlohmann::json::parse(line);
            j["latency_s"] = 0.0;
            out.push_back(j.dump());
        }
        return out;
    };
    REQUIRE(strip_latency(testutil::read_file(d1.path / "journal.jsonl")) ==
            strip_latency(testutil::read_file(d2.path / "journal.jsonl")));
}

TEST_CASE("pipeline config JSON round-trips every field") {
    PipelineConfig cfg;
    cfg.strategy = Strategy::cite;
    cfg.mode = Mode::support;
    cfg.chunk_tokens = 4096;
    cfg.merge_context_tokens = 16000;
    cfg.passage_tokens = 80;
    cfg.target_context_tokens = 900;
    cfg.top_k = 7;
    cfg.max_extract_sentences = 15;
    cfg.bm25_k1 = 1.5;
    cfg.bm25_b = 0.6;
    cfg.backend.kind = BackendKind::http;
    cfg.backend.base_url = "http://10.0.0.1:9999";
    cfg.backend.model = "m-9";
    cfg.backend.max_retries = 7;
    cfg.tokenizer.scheme = TokenScheme::whitespace_words;
    cfg.prompt_dir = "/tmp/prompts";

    nlohmann::json j = cfg;
    REQUIRE(j["schema_version"] == run_schema_version);
    PipelineConfig back = j.get<PipelineConfig>();
    REQUIRE(back == cfg);

    PipelineConfig base;
    base.baseline = Baseline::cite_hmerge;
    nlohmann::json jb = base;
    REQUIRE(jb["strategy"].is_null());
    REQUIRE(jb["baseline"] == "cite-hmerge");
    REQUIRE(jb.get<PipelineConfig>() == base);
}

TEST_CASE("summary nodes serialize bundles and optionals faithfully") {
    SummaryNode n;
    n.id = "L2_003";
    n.level = 2;
    n.children = {"L1_006", "L1_007"};
    n.summary = "clean text";
    n.raw_response = "clean text [1]";
    n.prompt_tokens = 42;
    n.output_tokens = 7;
    n.diagnostics = {"citation [9] out of range 1..2"};
    n.warnings = {"dropped 1 of 5 context passages to fit the merge budget"};
    ContextBundle b;
    b.strategy = Strategy::cite;
    b.passages.push_back(Passage{1, "evidence", 2, SourceSpan{"doc", 10, 18}});
    b.score_trace = {3.0};
    n.bundle = b;

    nlohmann::json j = n;
    SummaryNode back = j.get<SummaryNode>();
    REQUIRE(back.id == n.id);
    REQUIRE(back.children == n.children);
    REQUIRE(back.summary == n.summary);
    REQUIRE(back.bundle.has_value());
    REQUIRE(back.bundle->passages.size() == 1);
    REQUIRE(back.bundle->passages[0].origin == SourceSpan{"doc", 10, 18});
    REQUIRE(back.bundle->score_trace == std::vector<double>{3.0});
    REQUIRE(back.diagnostics == n.diagnostics);
    REQUIRE(back.warnings == n.warnings);

    SummaryNode bare = stub_node("L1_000", "s");
    nlohmann::json jb = bare;
    REQUIRE(jb["bundle"].is_null());
    REQUIRE_FALSE(jb.get<SummaryNode>().bundle.has_value());
}
