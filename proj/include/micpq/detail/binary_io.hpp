#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "micpq/error.hpp"

namespace micpq::detail {

/// Little-endian byte sink. Everything on disk goes through here.
class ByteWriter {
public:
    void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }

    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

    void f32s(std::span<const float> vs) {
        for (float v : vs) f32(v);
    }
    void raw(std::span<const std::uint8_t> b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }

    const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

    /// Writes the buffer to `path` in one go; IoFailure on any error.
    void save(const std::filesystem::path& path) const;

private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    std::vector<std::uint8_t> bytes_;
};

/// Little-endian byte source with offset tracking; underflow throws
/// TruncatedFile naming the offset where the read would have started.
class ByteReader {
public:
    explicit ByteReader(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}

    static ByteReader load(const std::filesystem::path& path);

    void expect_magic(std::string_view m) {
        need(m.size());
        if (std::memcmp(bytes_.data() + pos_, m.data(), m.size()) != 0) {
            throw Error(ErrorCode::BadMagic, "expected magic '" + std::string(m) + "' at byte offset " +
                                                 std::to_string(pos_));
        }
        pos_ += m.size();
    }

    std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    float f32() { return std::bit_cast<float>(u32()); }

    void f32s(std::span<float> out) {
        need(out.size() * 4);
        for (float& v : out) v = f32();
    }
    std::vector<std::uint8_t> raw(std::size_t n) {
        need(n);
        std::vector<std::uint8_t> out(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                      bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return out;
    }

    /// Throws TruncatedFile unless `n` more bytes are available.
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) {
            throw Error(ErrorCode::TruncatedFile, "needed " + std::to_string(n) + " bytes at byte offset " +
                                                      std::to_string(pos_) + ", file has " +
                                                      std::to_string(bytes_.size()));
        }
    }

    std::size_t offset() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
    std::uint64_t get(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    std::vector<std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace micpq::detail
