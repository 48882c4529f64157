#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace testutil {

// Fresh directory under the system temp root, removed when the guard dies.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        static std::mt19937_64 rng(std::random_device{}());
        std::ostringstream name;
        name << "cahm-" << tag << "-" << std::hex << rng();
        path = std::filesystem::temp_directory_path() / name.str();
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::filesystem::path file(const std::string& name) const { return path / name; }
};

inline void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    out << content;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// "w1 w2 ... wN" with single-space separators.
inline std::string make_words(int n, const std::string& stem = "w") {
    std::string out;
    for (int i = 1; i <= n; ++i) {
        if (i > 1) out += ' ';
        out += stem + std::to_string(i);
    }
    return out;
}

// Deterministic prose: numbered sentences of `words_per` words each.
inline std::string make_prose(int sentences, int words_per = 8) {
    std::string out;
    for (int s = 0; s < sentences; ++s) {
        if (s) out += ' ';
        out += "Sentence";
        for (int w = 1; w < words_per; ++w) out += " item" + std::to_string(s) + "x" + std::to_string(w);
        out += '.';
    }
    return out;
}

} // namespace testutil
