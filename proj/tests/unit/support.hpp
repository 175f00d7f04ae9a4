#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <unistd.h>

#include "purple/core.hpp"
#include "purple/policy.hpp"

namespace test {

inline purple::Matrix random_matrix(purple::Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    purple::Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * (2.0 * purple::uniform01(rng) - 1.0);
    return m;
}

/// Context with random token embeddings of width d; record i has 1 + i % 3 tokens.
inline purple::Context random_context(purple::Rng& rng, std::size_t n, std::size_t d) {
    purple::Context c;
    c.query_text = "query";
    c.reference = "ref";
    c.query_embeddings = random_matrix(rng, 2, d);
    for (std::size_t i = 0; i < n; ++i) {
        purple::Record r;
        r.id = "r" + std::to_string(i);
        r.input_text = "in" + std::to_string(i);
        r.output_text = "out" + std::to_string(i);
        r.token_embeddings = random_matrix(rng, 1 + i % 3, d);
        c.records.push_back(std::move(r));
    }
    return c;
}

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    TempDir() {
        static int counter = 0;
        path = std::filesystem::temp_directory_path() /
               ("purple_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace test
