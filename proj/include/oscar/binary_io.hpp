#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "oscar/error.hpp"

namespace oscar {

// Little-endian serialization helpers shared by the binary containers.
class ByteWriter {
public:
    void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }
    void u32(std::uint32_t v) { put(v); }
    void u64(std::uint64_t v) { put(v); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
    void f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
    void f32s(std::span<const float> vs) {
        for (float v : vs) f32(v);
    }

    const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    template <typename U>
    void put(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    ByteReader(std::span<const std::uint8_t> bytes, std::string container)
        : bytes_(bytes), container_(std::move(container)) {}

    void expect_magic(std::string_view m) {
        if (bytes_.size() < m.size() || std::memcmp(bytes_.data(), m.data(), m.size()) != 0)
            throw FormatError("not an " + container_ + " file");
        pos_ = m.size();
    }
    std::uint32_t u32() { return get<std::uint32_t>(); }
    std::uint64_t u64() { return get<std::uint64_t>(); }
    double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
    float f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
    void f32s(std::span<float> out) {
        need(out.size() * 4);
        for (auto& v : out) v = f32();
    }

    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
    void expect_end() const {
        if (remaining() != 0) throw FormatError(container_ + " file has trailing bytes");
    }

private:
    void need(std::size_t n) const {
        if (remaining() < n) throw FormatError("truncated " + container_ + " file");
    }

    template <typename U>
    U get() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
        pos_ += sizeof(U);
        return v;
    }

    std::span<const std::uint8_t> bytes_;
    std::string container_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);
// Digest of floats serialized as little-endian f32.
std::string sha256_hex(std::span<const float> values);

}  // namespace oscar
