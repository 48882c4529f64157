#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cstdlib>
#include <future>

#include "cahm/backend.hpp"
#include "helpers.hpp"

using namespace cahm;

namespace {

BackendConfig mock_cfg(MockStyle style, int head = 3) {
    BackendConfig c;
    c.kind = BackendKind::mock;
    c.mock_style = style;
    c.mock_head_sentences = head;
    return c;
}

TokenizerSpec words() { return TokenizerSpec{TokenScheme::whitespace_words, ""}; }

std::string fenced(const std::string& body) { return "Intro:\n---\n" + body + "\n---\nOutro."; }

// Local OpenAI-style endpoint with a scripted handler.
struct TestServer {
    httplib::Server srv;
    std::atomic<int> hits{0};
    int port = 0;
    std::thread th;

    explicit TestServer(std::function<void(int, const httplib::Request&, httplib::Response&)> handler) {
        srv.Post("/v1/chat/completions", [this, handler](const httplib::Request& req, httplib::Response& res) {
            handler(hits.fetch_add(1), req, res);
        });
        port = srv.bind_to_any_port("127.0.0.1");
        th = std::thread([this] { srv.listen_after_bind(); });
        srv.wait_until_ready();
    }
    ~TestServer() {
        srv.stop();
        th.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
};

std::string completion_body(const std::string& content, long completion_tokens = -1) {
    nlohmann::json j;
    j["choices"] = nlohmann::json::array({{{"message", {{"content", content}}}}});
    if (completion_tokens >= 0) j["usage"] = {{"completion_tokens", completion_tokens}};
    return j.dump();
}

BackendConfig http_cfg(const TestServer& server) {
    BackendConfig c;
    c.kind = BackendKind::http;
    c.base_url = server.url();
    c.max_retries = 3;
    c.retry_base_delay_ms = 1;
    return c;
}

} // namespace

TEST_CASE("echo-head returns the first K sentences of the first fenced block") {
    std::string prompt = fenced("One here. Two here. Three here. Four here. Five here.");
    REQUIRE(mock_generate_text(prompt, MockStyle::echo_head, 3) == "One here. Two here. Three here.");
    REQUIRE(mock_generate_text(prompt, MockStyle::echo_head, 1) == "One here.");
    REQUIRE(mock_generate_text(prompt, MockStyle::echo_head, 99) ==
            "One here. Two here. Three here. Four here. Five here.");
}

TEST_CASE("echo-head on its own output is a fixed point") {
    std::string first = mock_generate_text(fenced("Aa bb. Cc dd. Ee ff."), MockStyle::echo_head, 2);
    std::string second = mock_generate_text(fenced(first), MockStyle::echo_head, 2);
    REQUIRE(second == first);
}

TEST_CASE("echo-head falls back to the whole prompt and to a stub for empty input") {
    REQUIRE(mock_generate_text("No fences. Two sentences.", MockStyle::echo_head, 1) == "No fences.");
    REQUIRE(mock_generate_text("", MockStyle::echo_head, 3) == "Empty input.");
    REQUIRE(mock_generate_text("---\n\n---\n", MockStyle::echo_head, 3) == "Empty input.");
}

TEST_CASE("mock generation is deterministic") {
    std::string prompt = fenced("Alpha one. Beta two. Gamma three.");
    for (MockStyle s : {MockStyle::echo_head, MockStyle::cite_all, MockStyle::cite_subset})
        REQUIRE(mock_generate_text(prompt, s, 2) == mock_generate_text(prompt, s, 2));
}

TEST_CASE("cite-all emits one labeled sentence per item") {
    std::string prompt = fenced("First item text here [1]\nSecond item words [2]\nThird [3]");
    std::string out = mock_generate_text(prompt, MockStyle::cite_all, 3);
    REQUIRE(out == "First item text here. [1] Second item words. [2] Third. [3]");
}

TEST_CASE("cite-all caps each sentence at eight words and strips terminal punctuation") {
    std::string item = "one two three four five six seven eight nine ten! [4]";
    std::string out = mock_generate_text(fenced(item), MockStyle::cite_all, 3);
    REQUIRE(out == "one two three four five six seven eight. [4]");
}

TEST_CASE("cite-all reads the last labeled block when several are fenced") {
    std::string prompt = "A:\n---\nSummary line [9]\n---\nB:\n---\nCtx one [1]\nCtx two [2]\n---\nTail.";
    std::string out = mock_generate_text(prompt, MockStyle::cite_all, 3);
    REQUIRE(out == "Ctx one. [1] Ctx two. [2]");
}

TEST_CASE("cite-subset picks a deterministic non-empty subset of the labels") {
    std::string prompt = fenced("Aa aa [1]\nBb bb [2]\nCc cc [3]\nDd dd [4]\nEe ee [5]");
    std::string all = mock_generate_text(prompt, MockStyle::cite_all, 3);
    std::string sub = mock_generate_text(prompt, MockStyle::cite_subset, 3);
    REQUIRE(!sub.empty());
    REQUIRE(sub == mock_generate_text(prompt, MockStyle::cite_subset, 3));
    // every emitted sentence also appears in the cite-all rendering
    for (int label = 1; label <= 5; ++label) {
        std::string marker = "[" + std::to_string(label) + "]";
        if (sub.find(marker) != std::string::npos) REQUIRE(all.find(marker) != std::string::npos);
    }
    REQUIRE(sub.find('[') != std::string::npos);
}

TEST_CASE("cite styles fall back to echo-head without a labeled block") {
    std::string prompt = fenced("Plain text. No labels anywhere.");
    REQUIRE(mock_generate_text(prompt, MockStyle::cite_all, 1) == "Plain text.");
    REQUIRE(mock_generate_text(prompt, MockStyle::cite_subset, 1) == "Plain text.");
}

TEST_CASE("backend construction validates limits") {
    BackendConfig bad = mock_cfg(MockStyle::echo_head);
    bad.parallelism = 0;
    REQUIRE_THROWS_AS(Backend(bad, words()), ConfigError);
    bad = mock_cfg(MockStyle::echo_head);
    bad.max_retries = -1;
    REQUIRE_THROWS_AS(Backend(bad, words()), ConfigError);
}

TEST_CASE("generate fills prompt and output token counts") {
    Backend b(mock_cfg(MockStyle::echo_head, 2), words());
    auto res = b.generate({fenced("Five words in here now. And a second sentence."), "t"});
    REQUIRE(res.prompt_tokens > 0);
    REQUIRE(res.output_tokens == Tokenizer(words()).count(res.text));
    REQUIRE(res.retries == 0);
}

TEST_CASE("oversized prompts fail before any request is made") {
    TestServer server([](int, const httplib::Request&, httplib::Response& res) {
        res.set_content(completion_body("should not be reached"), "application/json");
    });
    BackendConfig c = http_cfg(server);
    c.context_window = 100;
    c.max_output_tokens = 90;
    Backend b(c, words());

    std::string prompt = testutil::make_words(20); // 20 + 90 > 100
    REQUIRE_THROWS_AS(b.generate({prompt, "big"}), BackendError);
    REQUIRE(server.hits.load() == 0);
    try {
        b.generate({prompt, "big"});
    } catch (const BackendError& e) {
        REQUIRE(std::string(e.what()).find("window") != std::string::npos);
        REQUIRE_FALSE(e.retries_exhausted);
    }
}

TEST_CASE("transient 503s are retried and the retry count reported") {
    TestServer server([](int hit, const httplib::Request&, httplib::Response& res) {
        if (hit < 2) {
            res.status = 503;
            res.set_content("overloaded", "text/plain");
        } else {
            res.set_content(completion_body("Recovered fine."), "application/json");
        }
    });
    Backend b(http_cfg(server), words());
    auto res = b.generate({"hello", "retry-tag"});
    REQUIRE(res.text == "Recovered fine.");
    REQUIRE(res.retries == 2);
    REQUIRE(server.hits.load() == 3);
}

TEST_CASE("persistent failures exhaust retries") {
    TestServer server([](int, const httplib::Request&, httplib::Response& res) {
        res.status = 503;
        res.set_content("still down", "text/plain");
    });
    BackendConfig c = http_cfg(server);
    c.max_retries = 1;
    Backend b(c, words());
    try {
        b.generate({"hello", "down"});
        FAIL("expected BackendError");
    } catch (const BackendError& e) {
        REQUIRE(e.retries_exhausted);
        REQUIRE(std::string(e.what()).find("503") != std::string::npos);
    }
    REQUIRE(server.hits.load() == 2); // initial try + 1 retry
}

TEST_CASE("client errors are terminal and carry a body excerpt") {
    TestServer server([](int, const httplib::Request&, httplib::Response& res) {
        res.status = 400;
        res.set_content("{\"error\": \"bad model name\"}", "application/json");
    });
    Backend b(http_cfg(server), words());
    try {
        b.generate({"hello", "bad"});
        FAIL("expected BackendError");
    } catch (const BackendError& e) {
        REQUIRE(e.http_status == 400);
        REQUIRE_FALSE(e.retries_exhausted);
        REQUIRE(std::string(e.what()).find("bad model name") != std::string::npos);
    }
    REQUIRE(server.hits.load() == 1);
}

TEST_CASE("reported usage wins over recounting") {
    TestServer server([](int, const httplib::Request&, httplib::Response& res) {
        res.set_content(completion_body("two words", 7), "application/json");
    });
    Backend b(http_cfg(server), words());
    auto res = b.generate({"hello", "usage"});
    REQUIRE(res.output_tokens == 7);
    REQUIRE(res.text == "two words");
}

TEST_CASE("empty or malformed completions are errors") {
    TestServer empty_server([](int, const httplib::Request&, httplib::Response& res) {
        res.set_content(completion_body(""), "application/json");
    });
    Backend b1(http_cfg(empty_server), words());
    REQUIRE_THROWS_AS(b1.generate({"hello", "empty"}), BackendError);

    TestServer junk_server([](int, const httplib::Request&, httplib::Response& res) {
        res.set_content("not json at all", "application/json");
    });
    Backend b2(http_cfg(junk_server), words());
    REQUIRE_THROWS_AS(b2.generate({"hello", "junk"}), BackendError);
}

TEST_CASE("the api key environment variable becomes a bearer header") {
    std::string seen_auth;
    std::mutex mu;
    TestServer server([&](int, const httplib::Request& req, httplib::Response& res) {
        {
            std::lock_guard lock(mu);
            seen_auth = req.get_header_value("Authorization");
        }
        res.set_content(completion_body("ok then"), "application/json");
    });
    setenv("CAHM_TEST_KEY", "sk-test-123", 1);
    BackendConfig c = http_cfg(server);
    c.api_key_env = "CAHM_TEST_KEY";
    Backend b(c, words());
    b.generate({"hello", "auth"});
    unsetenv("CAHM_TEST_KEY");
    REQUIRE(seen_auth == "Bearer sk-test-123");
}

TEST_CASE("request bodies carry model, prompt, and sampling settings") {
    nlohmann::json seen;
    std::mutex mu;
    TestServer server([&](int, const httplib::Request& req, httplib::Response& res) {
        {
            std::lock_guard lock(mu);
            seen = nlohmann::json::parse(req.body);
        }
        res.set_content(completion_body("fine"), "application/json");
    });
    BackendConfig c = http_cfg(server);
    c.model = "test-model";
    c.temperature = 0.0;
    c.max_output_tokens = 321;
    Backend b(c, words());
    b.generate({"the prompt text", "body"});
    REQUIRE(seen["model"] == "test-model");
    REQUIRE(seen["max_tokens"] == 321);
    REQUIRE(seen["messages"][0]["role"] == "user");
    REQUIRE(seen["messages"][0]["content"] == "the prompt text");
}

TEST_CASE("in-flight requests never exceed the configured parallelism") {
    BackendConfig c = mock_cfg(MockStyle::echo_head);
    c.parallelism = 3;
    c.mock_latency_ms = 5;
    Backend b(c, words());

    std::vector<std::future<void>> futs;
    for (int i = 0; i < 16; ++i)
        futs.push_back(std::async(std::launch::async, [&b, i] {
            b.generate({fenced("Load test sentence number " + std::to_string(i) + "."), "conc"});
        }));
    for (auto& f : futs) f.get();

    REQUIRE(b.peak_concurrency() <= 3);
    REQUIRE(b.peak_concurrency() >= 2);
}

TEST_CASE("backend enum names round-trip") {
    REQUIRE(backend_kind_from_string("http") == BackendKind::http);
    REQUIRE(backend_kind_from_string("mock") == BackendKind::mock);
    REQUIRE_THROWS_AS(backend_kind_from_string("grpc"), ConfigError);
    for (MockStyle s : {MockStyle::echo_head, MockStyle::cite_all, MockStyle::cite_subset})
        REQUIRE(mock_style_from_string(to_string(s)) == s);
    REQUIRE_THROWS_AS(mock_style_from_string("random"), ConfigError);
}
