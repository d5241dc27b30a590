#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "cf3d/errors.hpp"

namespace cf3d {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class ByteWriter {
public:
    template <class T>
        requires std::is_arithmetic_v<T>
    void put(T v) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
        buf_.insert(buf_.end(), p, p + sizeof(T));
    }
    void put_bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        buf_.insert(buf_.end(), p, p + n);
    }
    void put_string(std::string_view s) {
        put(static_cast<std::uint32_t>(s.size()));
        put_bytes(s.data(), s.size());
    }
    std::vector<std::uint8_t>& bytes() { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    ByteReader(const std::uint8_t* data, std::size_t size, std::string what)
        : data_(data), size_(size), what_(std::move(what)) {}
    explicit ByteReader(const std::vector<std::uint8_t>& v, std::string what = "buffer")
        : ByteReader(v.data(), v.size(), std::move(what)) {}

    template <class T>
        requires std::is_arithmetic_v<T>
    T get() {
        T v;
        std::memcpy(&v, take(sizeof(T)), sizeof(T));
        return v;
    }
    void get_bytes(void* out, std::size_t n) { std::memcpy(out, take(n), n); }
    std::string get_string(std::size_t max_len = 1 << 20) {
        const auto n = get<std::uint32_t>();
        if (n > max_len) throw FormatError(what_ + ": implausible string length " + std::to_string(n));
        const auto* p = take(n);
        return std::string(reinterpret_cast<const char*>(p), n);
    }
    std::size_t remaining() const { return size_ - pos_; }

private:
    const std::uint8_t* take(std::size_t n) {
        if (n > size_ - pos_) throw FormatError(what_ + ": truncated (wanted " + std::to_string(n) + " more bytes)");
        const auto* p = data_ + pos_;
        pos_ += n;
        return p;
    }
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
    std::string what_;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace cf3d
