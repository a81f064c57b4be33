#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include "spod/errors.hpp"

namespace spod::io {

// All binary formats are little-endian regardless of host order.

template <typename T>
T to_little(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
        return value;
    } else {
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, &value, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) {
            std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
        }
        std::memcpy(&value, bytes, sizeof(T));
        return value;
    }
}

class Writer {
public:
    explicit Writer(std::ostream& out) : out_(out) {}

    void magic(const char (&tag)[9]) { out_.write(tag, 8); }

    template <typename T>
    void put(T value) {
        const T le = to_little(value);
        out_.write(reinterpret_cast<const char*>(&le), sizeof(T));
    }

    void string(const std::string& s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }

    void doubles(const double* data, std::size_t n) {
        if constexpr (std::endian::native == std::endian::little) {
            out_.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                put(data[i]);
            }
        }
    }

    void check() const {
        if (!out_) {
            throw IoError("write failed");
        }
    }

private:
    std::ostream& out_;
};

class Reader {
public:
    Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

    void expect_magic(const char (&tag)[9]) {
        char buf[8];
        in_.read(buf, 8);
        if (!in_ || std::memcmp(buf, tag, 8) != 0) {
            throw IoError(source_ + ": bad magic, expected " + std::string(tag, 8));
        }
    }

    template <typename T>
    T get() {
        T value{};
        in_.read(reinterpret_cast<char*>(&value), sizeof(T));
        if (!in_) {
            throw IoError(source_ + ": truncated file");
        }
        return to_little(value);
    }

    std::string string(std::size_t max_len = 1 << 20) {
        const auto n = get<std::uint32_t>();
        if (n > max_len) {
            throw IoError(source_ + ": string field too long");
        }
        std::string s(n, '\0');
        in_.read(s.data(), n);
        if (!in_) {
            throw IoError(source_ + ": truncated file");
        }
        return s;
    }

    void doubles(double* data, std::size_t n) {
        if constexpr (std::endian::native == std::endian::little) {
            in_.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
            if (!in_) {
                throw IoError(source_ + ": truncated payload");
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                data[i] = get<double>();
            }
        }
    }

    void expect_end() {
        if (in_.peek() != std::char_traits<char>::eof()) {
            throw IoError(source_ + ": trailing bytes after payload");
        }
    }

    const std::string& source() const { return source_; }

private:
    std::istream& in_;
    std::string source_;
};

}  // namespace spod::io
