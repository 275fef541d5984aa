#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "favae/error.hpp"

// Little-endian primitive IO for checkpoint and codebook blobs.
namespace favae::binio {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename U>
void put(std::ostream& out, U value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(U));
    if (!out) throw IoError("write failed");
}

template <typename U>
U get(std::istream& in) {
    U value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(U));
    if (!in) throw IoError("unexpected end of stream");
    return value;
}

inline void put_magic(std::ostream& out, const char (&magic)[5]) {
    out.write(magic, 4);
    if (!out) throw IoError("write failed");
}

inline void expect_magic(std::istream& in, const char (&magic)[5]) {
    char buf[4];
    in.read(buf, 4);
    if (!in || std::memcmp(buf, magic, 4) != 0) throw IoError(std::string("bad magic, expected ") + magic);
}

template <typename T>
void put_f32(std::ostream& out, std::span<const T> values) {
    std::vector<float> buf(values.begin(), values.end());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!out) throw IoError("write failed");
}

template <typename T>
void get_f32(std::istream& in, std::span<T> values) {
    std::vector<float> buf(values.size());
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw IoError("unexpected end of stream");
    for (std::size_t i = 0; i < buf.size(); ++i) values[i] = static_cast<T>(buf[i]);
}

inline void put_string(std::ostream& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
    if (!out) throw IoError("write failed");
}

inline std::string get_string(std::istream& in, std::uint32_t limit = 1u << 16) {
    const auto n = get<std::uint32_t>(in);
    if (n > limit) throw IoError("string length out of range");
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw IoError("unexpected end of stream");
    return s;
}

}  // namespace favae::binio
