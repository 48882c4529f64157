#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cahm/errors.hpp"
#include "cahm/segmentation.hpp"

namespace cahm {

struct DatasetRow {
    std::string id;
    std::string document;
    std::optional<std::string> reference_summary;
    std::optional<std::string> domain_tag;

    Document to_document() const { return Document{id, document, reference_summary, domain_tag}; }
};

// JSONL, one row per line: {"id", "document", "reference_summary"?, "domain_tag"?}.
// Blank lines are skipped. Ids must be unique and documents non-empty.
inline std::vector<DatasetRow> load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open dataset: " + path.string());

    std::vector<DatasetRow> rows;
    std::set<std::string> seen;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": invalid JSON: " + e.what());
        }
        DatasetRow row;
        try {
            row.id = j.at("id").get<std::string>();
            row.document = j.at("document").get<std::string>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                              ": rows need string fields 'id' and 'document'");
        }
        if (j.contains("reference_summary") && !j["reference_summary"].is_null())
            row.reference_summary = j["reference_summary"].get<std::string>();
        if (j.contains("domain_tag") && !j["domain_tag"].is_null())
            row.domain_tag = j["domain_tag"].get<std::string>();
        if (row.id.empty())
            throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": empty id");
        if (row.document.empty())
            throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": empty document for id '" +
                              row.id + "'");
        if (!seen.insert(row.id).second)
            throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": duplicate id '" + row.id +
                              "'");
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace cahm
