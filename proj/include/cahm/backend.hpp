#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cahm/errors.hpp"
#include "cahm/segmentation.hpp"
#include "cahm/text.hpp"

// vendor httplib is header-only; plain HTTP is enough for local endpoints
#include <httplib.h>

namespace cahm {

enum class BackendKind { http, mock };
enum class MockStyle { echo_head, cite_all, cite_subset };

inline std::string to_string(BackendKind k) { return k == BackendKind::http ? "http" : "mock"; }
inline BackendKind backend_kind_from_string(std::string_view s) {
    if (s == "http") return BackendKind::http;
    if (s == "mock") return BackendKind::mock;
    throw ConfigError("unknown backend kind: " + std::string(s));
}

inline std::string to_string(MockStyle s) {
    switch (s) {
    case MockStyle::echo_head: return "echo-head";
    case MockStyle::cite_all: return "cite-all";
    case MockStyle::cite_subset: return "cite-subset";
    }
    return "echo-head";
}
inline MockStyle mock_style_from_string(std::string_view s) {
    if (s == "echo-head") return MockStyle::echo_head;
    if (s == "cite-all") return MockStyle::cite_all;
    if (s == "cite-subset") return MockStyle::cite_subset;
    throw ConfigError("unknown mock style: " + std::string(s));
}

struct BackendConfig {
    BackendKind kind = BackendKind::mock;
    MockStyle mock_style = MockStyle::echo_head;
    int mock_head_sentences = 3;
    long mock_latency_ms = 0; // test hook for the concurrency limiter
    std::string base_url = "http://127.0.0.1:8080";
    std::string model = "local";
    std::string api_key_env = "CAHM_API_KEY";
    long context_window = 131072;
    long max_output_tokens = 1200;
    double temperature = 0.0;
    long request_timeout_s = 120;
    int max_retries = 3;
    long retry_base_delay_ms = 250;
    int parallelism = 4;

    bool operator==(const BackendConfig&) const = default;
};

struct GenRequest {
    std::string prompt;
    std::string tag; // node identifier for the journal
};

struct GenResult {
    std::string text;
    long prompt_tokens = 0;
    long output_tokens = 0;
    double latency_s = 0.0;
    int retries = 0;
};

// ---------------------------------------------------------------------------
// Mock generation
// ---------------------------------------------------------------------------

namespace detail {

// Blocks delimited by lines that are exactly "---", paired in order.
inline std::vector<std::string> fenced_blocks(std::string_view prompt) {
    std::vector<std::string> lines;
    size_t pos = 0;
    while (pos <= prompt.size()) {
        size_t nl = prompt.find('\n', pos);
        if (nl == std::string_view::npos) {
            lines.emplace_back(prompt.substr(pos));
            break;
        }
        lines.emplace_back(prompt.substr(pos, nl - pos));
        pos = nl + 1;
    }
    std::vector<std::string> blocks;
    std::string current;
    bool open = false;
    for (auto& line : lines) {
        if (line == "---") {
            if (open) {
                blocks.push_back(current);
                current.clear();
            }
            open = !open;
            continue;
        }
        if (open) {
            if (!current.empty()) current += '\n';
            current += line;
        }
    }
    return blocks;
}

struct LabeledItem {
    int label = 0;
    std::string text;
};

// Items of the form "<text> [n]" terminated at line ends. Text may span
// lines; it runs from the previous item's end to the label.
inline std::vector<LabeledItem> parse_labeled_block(std::string_view block) {
    std::vector<LabeledItem> items;
    size_t item_begin = 0;
    size_t pos = 0;
    while (pos < block.size()) {
        size_t nl = block.find('\n', pos);
        size_t line_end = (nl == std::string_view::npos) ? block.size() : nl;
        // trailing "[digits]" on this line?
        size_t e = line_end;
        if (e > item_begin && block[e - 1] == ']') {
            size_t d = e - 1;
            while (d > item_begin && block[d - 1] >= '0' && block[d - 1] <= '9') --d;
            if (d < e - 1 && d > item_begin && block[d - 1] == '[') {
                int label = 0;
                for (size_t i = d; i < e - 1; ++i) label = label * 10 + (block[i] - '0');
                std::string text(trim(block.substr(item_begin, d - 1 - item_begin)));
                items.push_back({label, std::move(text)});
                item_begin = line_end + 1;
            }
        }
        if (nl == std::string_view::npos) break;
        pos = nl + 1;
    }
    return items;
}

inline std::string head_words_sentence(std::string_view text, int label, size_t max_words = 8) {
    auto words = word_tokens(text);
    std::string prefix;
    for (size_t i = 0; i < words.size() && i < max_words; ++i) {
        if (i) prefix += ' ';
        prefix += std::string(words[i]);
    }
    while (!prefix.empty() && (prefix.back() == '.' || prefix.back() == '!' || prefix.back() == '?'))
        prefix.pop_back();
    if (prefix.empty()) prefix = "(empty)";
    return prefix + ". [" + std::to_string(label) + "]";
}

} // namespace detail

// Deterministic offline generation. echo-head: the first K sentences of the
// first fenced block (whole prompt when unfenced). cite-all: one sentence per
// labeled item of the last labeled block, citing each label once. cite-subset:
// same, over a pseudo-random subset seeded by the prompt digest. Cite styles
// fall back to echo-head when the prompt carries no labeled block.
inline std::string mock_generate_text(std::string_view prompt, MockStyle style, int head_sentences) {
    if (style != MockStyle::echo_head) {
        auto blocks = detail::fenced_blocks(prompt);
        std::vector<detail::LabeledItem> items;
        for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) {
            items = detail::parse_labeled_block(*it);
            if (!items.empty()) break;
        }
        if (!items.empty()) {
            std::vector<size_t> chosen;
            if (style == MockStyle::cite_all) {
                for (size_t i = 0; i < items.size(); ++i) chosen.push_back(i);
            } else {
                uint64_t digest = fnv1a64(prompt);
                std::mt19937_64 rng(digest);
                for (size_t i = 0; i < items.size(); ++i)
                    if ((rng() & 1) == 0) chosen.push_back(i);
                if (chosen.empty()) chosen.push_back(static_cast<size_t>(digest % items.size()));
            }
            std::string out;
            for (size_t idx : chosen) {
                if (!out.empty()) out += ' ';
                out += detail::head_words_sentence(items[idx].text, items[idx].label);
            }
            return out;
        }
    }
    auto blocks = detail::fenced_blocks(prompt);
    std::string_view src = blocks.empty() ? prompt : std::string_view(blocks.front());
    auto sentences = split_sentences(src);
    std::string out;
    for (size_t i = 0; i < sentences.size() && static_cast<int>(i) < head_sentences; ++i) {
        if (i) out += ' ';
        out += sentences[i];
    }
    if (out.empty()) out = "Empty input.";
    return out;
}

// ---------------------------------------------------------------------------
// Backend
// ---------------------------------------------------------------------------

// Thread-safe generation front end. A shared limiter caps in-flight requests
// at config.parallelism regardless of how many threads call generate.
class Backend {
public:
    Backend(BackendConfig config, TokenizerSpec tok_spec)
        : config_(std::move(config)), tok_(std::move(tok_spec)) {
        if (config_.parallelism < 1) throw ConfigError("backend parallelism must be >= 1");
        if (config_.max_retries < 0) throw ConfigError("backend max_retries must be >= 0");
    }

    const BackendConfig& config() const { return config_; }
    const Tokenizer& tokenizer() const { return tok_; }

    int peak_concurrency() const {
        std::lock_guard lock(mu_);
        return peak_;
    }

    GenResult generate(const GenRequest& req) {
        long prompt_tokens = tok_.count(req.prompt);
        if (prompt_tokens + config_.max_output_tokens > config_.context_window)
            throw BackendError("prompt for '" + req.tag + "' needs " + std::to_string(prompt_tokens) +
                                   " tokens + " + std::to_string(config_.max_output_tokens) +
                                   " output, exceeding the " + std::to_string(config_.context_window) +
                                   "-token window",
                               0, false);

        Slot slot(*this);
        auto t0 = std::chrono::steady_clock::now();
        GenResult res = config_.kind == BackendKind::mock ? run_mock(req) : run_http(req);
        res.prompt_tokens = prompt_tokens;
        if (res.output_tokens == 0) res.output_tokens = tok_.count(res.text);
        res.latency_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return res;
    }

private:
    struct Slot {
        explicit Slot(Backend& b) : backend(b) {
            std::unique_lock lock(b.mu_);
            b.cv_.wait(lock, [&] { return b.in_flight_ < b.config_.parallelism; });
            ++b.in_flight_;
            b.peak_ = std::max(b.peak_, b.in_flight_);
        }
        ~Slot() {
            {
                std::lock_guard lock(backend.mu_);
                --backend.in_flight_;
            }
            backend.cv_.notify_one();
        }
        Backend& backend;
    };

    GenResult run_mock(const GenRequest& req) {
        if (config_.mock_latency_ms > 0)
            std::this_thread::sleep_for(std::chrono::milliseconds(config_.mock_latency_ms));
        GenResult res;
        res.text = mock_generate_text(req.prompt, config_.mock_style, config_.mock_head_sentences);
        return res;
    }

    GenResult run_http(const GenRequest& req) {
        nlohmann::json body = {
            {"model", config_.model},
            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", req.prompt}}})},
            {"temperature", config_.temperature},
            {"max_tokens", config_.max_output_tokens},
        };
        const std::string payload = body.dump();

        httplib::Headers headers;
        if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key)
            headers.emplace("Authorization", std::string("Bearer ") + key);

        std::string last_error;
        for (int attempt = 0;; ++attempt) {
            httplib::Client cli(config_.base_url);
            cli.set_connection_timeout(config_.request_timeout_s, 0);
            cli.set_read_timeout(config_.request_timeout_s, 0);
            cli.set_write_timeout(config_.request_timeout_s, 0);

            auto res = cli.Post("/v1/chat/completions", headers, payload, "application/json");
            if (res) {
                if (res->status >= 200 && res->status < 300) {
                    GenResult out = parse_completion(res->body, req.tag);
                    out.retries = attempt;
                    return out;
                }
                if (res->status >= 400 && res->status < 500) {
                    throw BackendError("backend rejected '" + req.tag + "' with HTTP " +
                                           std::to_string(res->status) + ": " + excerpt(res->body),
                                       res->status, false);
                }
                last_error = "HTTP " + std::to_string(res->status) + ": " + excerpt(res->body);
            } else {
                last_error = "connection failure: " + httplib::to_string(res.error());
            }
            if (attempt >= config_.max_retries)
                throw BackendError("backend gave up on '" + req.tag + "' after " +
                                       std::to_string(attempt) + " retries; last error: " + last_error,
                                   0, true);
            std::this_thread::sleep_for(
                std::chrono::milliseconds(config_.retry_base_delay_ms << attempt));
        }
    }

    GenResult parse_completion(const std::string& body, const std::string& tag) const {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception&) {
            throw BackendError("unparseable response for '" + tag + "': " + excerpt(body), 0, false);
        }
        GenResult res;
        try {
            res.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception&) {
            throw BackendError("response for '" + tag + "' lacks choices[0].message.content: " + excerpt(body),
                               0, false);
        }
        if (res.text.empty())
            throw BackendError("backend returned empty text for '" + tag + "'", 0, false);
        if (j.contains("usage")) {
            const auto& u = j["usage"];
            if (u.contains("completion_tokens")) res.output_tokens = u["completion_tokens"].get<long>();
        }
        return res;
    }

    static std::string excerpt(const std::string& body) {
        constexpr size_t cap = 200;
        if (body.size() <= cap) return body;
        return body.substr(0, cap) + "...";
    }

    BackendConfig config_;
    Tokenizer tok_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    int in_flight_ = 0;
    int peak_ = 0;
};

} // namespace cahm
