#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cahm/errors.hpp"
#include "cahm/segmentation.hpp"

namespace cahm {

enum class TemplateId {
    chunk_summary,
    chunk_summary_citations,
    merge_plain,
    merge_citations,
    merge_support,
    merge_support_citations,
};

inline constexpr std::array<TemplateId, 6> all_template_ids = {
    TemplateId::chunk_summary,      TemplateId::chunk_summary_citations,
    TemplateId::merge_plain,        TemplateId::merge_citations,
    TemplateId::merge_support,      TemplateId::merge_support_citations,
};

inline std::string template_filename(TemplateId id) {
    switch (id) {
    case TemplateId::chunk_summary: return "chunk_summary.txt";
    case TemplateId::chunk_summary_citations: return "chunk_summary_citations.txt";
    case TemplateId::merge_plain: return "merge_plain.txt";
    case TemplateId::merge_citations: return "merge_citations.txt";
    case TemplateId::merge_support: return "merge_support.txt";
    case TemplateId::merge_support_citations: return "merge_support_citations.txt";
    }
    return "";
}

// A template is plain text with `{}` slots filled left to right.
struct PromptTemplate {
    TemplateId id{};
    std::string text;

    int arity() const {
        int n = 0;
        for (size_t i = 0; i + 1 < text.size(); ++i)
            if (text[i] == '{' && text[i + 1] == '}') ++n;
        return n;
    }

    std::string render(const std::vector<std::string>& slots) const {
        if (static_cast<int>(slots.size()) != arity())
            throw ConfigError("template " + template_filename(id) + " expects " +
                              std::to_string(arity()) + " slots, got " + std::to_string(slots.size()));
        std::string out;
        out.reserve(text.size() + 256);
        size_t next = 0;
        for (size_t i = 0; i < text.size(); ++i) {
            if (i + 1 < text.size() && text[i] == '{' && text[i + 1] == '}') {
                out += slots[next++];
                ++i;
            } else {
                out += text[i];
            }
        }
        return out;
    }
};

namespace detail {

inline const char* default_template_text(TemplateId id) {
    switch (id) {
    case TemplateId::chunk_summary:
        return "Below is a document:\n"
               "---\n"
               "{}\n"
               "---\n"
               "Write a summary containing all key information. There should be no explicit "
               "mention of words like \"document\" or \"summary\" in the summary.";
    case TemplateId::chunk_summary_citations:
        return "Below is a document with each paragraph assigned to a label at the end ([n]) "
               "and separated by line breaks:\n"
               "---\n"
               "{}\n"
               "---\n"
               "Write a summary containing all key information. There should be no explicit "
               "mention of words like \"document\" or \"summary\" in the summary. After each "
               "summary sentence, you should assign a label to that sentence showing which "
               "paragraph in the document it corresponds to. Specifically, follow the format "
               "below:\n"
               "\n"
               "<sentence 1>. [n] <sentence 2>. [m] ...";
    case TemplateId::merge_plain:
        return "Below are several summaries of different parts of a document:\n"
               "---\n"
               "{}\n"
               "---\n"
               "Merge the given summaries into one single summary containing all key "
               "information. There should be no explicit mention of words like \"document\" "
               "and \"summary\" in the summary.";
    case TemplateId::merge_citations:
        return "Below are several summaries of different parts of a document with each summary "
               "having sentences with labels at the end ([1], [2], ...) and separated by line "
               "breaks:\n"
               "---\n"
               "{}\n"
               "---\n"
               "Merge the given summaries into one single summary containing all key "
               "information. There should be no explicit mention of words like \"document\" "
               "and \"summary\" in the summary. After each summary sentence, you should assign "
               "a label to that sentence showing which paragraph in the document it "
               "corresponds to. Specifically, follow the format below:\n"
               "\n"
               "<sentence 1>. [n] <sentence 2>. [m] ...";
    case TemplateId::merge_support:
        return "Below are several summaries of different parts of a document:\n"
               "---\n"
               "{}\n"
               "---\n"
               "Below are the supporting contexts of the previously shown summaries:\n"
               "---\n"
               "{}\n"
               "---\n"
               "Merge the given summaries into one single summary containing all key "
               "information and use the supporting contexts to make sure the merged summary "
               "contains no factual errors. The gist of the summary should be based solely on "
               "the given summaries, while the supporting contexts should be used for "
               "proofreading only. There should be no explicit mention of words like "
               "\"document\", \"context\" or \"summary\" in the summary.";
    case TemplateId::merge_support_citations:
        return "Below are several summaries of different parts of a document:\n"
               "---\n"
               "{}\n"
               "---\n"
               "Below are the supporting contexts of the previously shown summaries, with each "
               "context assigned to a label at the end ([n]) and separated by line breaks:\n"
               "---\n"
               "{}\n"
               "---\n"
               "Merge the given summaries into one single summary containing all key "
               "information and use the supporting contexts to make sure the merged summary "
               "contains no factual errors. The gist of the summary should be based solely on "
               "the given summaries, while the supporting contexts should be used for "
               "proofreading only. There should be no explicit mention of words like "
               "\"document\", \"context\" or \"summary\" in the summary. After each summary "
               "sentence, you should assign a label to that sentence showing which supporting "
               "context it corresponds to. Specifically, follow the format below:\n"
               "\n"
               "<sentence 1>. [n] <sentence 2>. [m] ...";
    }
    return "";
}

inline int expected_arity(TemplateId id) {
    switch (id) {
    case TemplateId::merge_support:
    case TemplateId::merge_support_citations:
        return 2;
    default:
        return 1;
    }
}

} // namespace detail

// The six prompt templates used by the pipeline, either compiled-in or
// loaded from a directory of <name>.txt files.
class PromptSet {
public:
    static PromptSet defaults() {
        PromptSet ps;
        for (TemplateId id : all_template_ids)
            ps.set(id, detail::default_template_text(id));
        return ps;
    }

    // Every file must exist; partial overrides are a config smell.
    static PromptSet load(const std::filesystem::path& dir) {
        PromptSet ps;
        for (TemplateId id : all_template_ids) {
            auto path = dir / template_filename(id);
            std::ifstream in(path, std::ios::binary);
            if (!in)
                throw ConfigError("prompt template missing: " + path.string());
            std::ostringstream ss;
            ss << in.rdbuf();
            std::string text = ss.str();
            // editors append a trailing newline; the slot text should not carry it
            while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
            ps.set(id, std::move(text));
        }
        return ps;
    }

    const PromptTemplate& get(TemplateId id) const { return templates_[static_cast<size_t>(id)]; }

    std::string render(TemplateId id, const std::vector<std::string>& slots) const {
        return get(id).render(slots);
    }

    // Prompt-size overhead of a template: its token count with empty slots.
    long overhead_tokens(TemplateId id, const Tokenizer& tok) const {
        const auto& t = get(id);
        return tok.count(t.render(std::vector<std::string>(t.arity())));
    }

private:
    void set(TemplateId id, std::string text) {
        PromptTemplate t{id, std::move(text)};
        if (t.arity() != detail::expected_arity(id))
            throw ConfigError("template " + template_filename(id) + " must have " +
                              std::to_string(detail::expected_arity(id)) + " {} slots, found " +
                              std::to_string(t.arity()));
        templates_[static_cast<size_t>(id)] = std::move(t);
    }

    std::array<PromptTemplate, 6> templates_{};
};

// "<text> [1]\n<text> [2]\n..." block for citation prompts.
inline std::string label_passages_block(const std::vector<Passage>& passages) {
    std::string out;
    for (size_t i = 0; i < passages.size(); ++i) {
        if (i) out += '\n';
        out += passages[i].text;
        out += " [";
        out += std::to_string(passages[i].label);
        out += ']';
    }
    return out;
}

// Joins node summaries for merge prompts, one per line.
inline std::string join_summaries_block(const std::vector<std::string>& summaries) {
    std::string out;
    for (size_t i = 0; i < summaries.size(); ++i) {
        if (i) out += '\n';
        out += summaries[i];
    }
    return out;
}

inline void write_default_templates(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (TemplateId id : all_template_ids) {
        std::ofstream out(dir / template_filename(id), std::ios::binary);
        out << detail::default_template_text(id) << '\n';
    }
}

} // namespace cahm
