#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <unistd.h>

#include "micpq/error.hpp"

/// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("micpq_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
    const std::filesystem::path& path() const { return path_; }

private:
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::filesystem::path path_;
};

inline std::vector<unsigned char> slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

#define CHECK_ERROR_CODE(expr, ec)                                  \
    do {                                                            \
        bool thrown_ = false;                                       \
        try {                                                       \
            (void)(expr);                                           \
        } catch (const micpq::Error& e_) {                          \
            thrown_ = true;                                         \
            CHECK_MESSAGE(e_.code() == (ec), e_.what());            \
        }                                                           \
        CHECK_MESSAGE(thrown_, "expected micpq::Error from " #expr); \
    } while (0)

inline std::string slurp_text(const std::filesystem::path& p) {
    const auto b = slurp(p);
    return {b.begin(), b.end()};
}
