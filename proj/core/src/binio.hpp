#pragma once

// Little-endian binary readers/writers shared by the checkpoint, embedding
// index and inverted index file formats. Values are serialized
// byte-by-byte, so the on-disk layout does not depend on host endianness.

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "sgpt/error.hpp"

namespace sgpt::binio {

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!os) throw IoError("write failed");
}

template <typename T>
void write_uint(std::ostream& os, T value) {
    static_assert(std::is_unsigned_v<T>);
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        buf[i] = static_cast<unsigned char>(value >> (8 * i));
    }
    write_bytes(os, buf, sizeof(T));
}

inline void write_f64(std::ostream& os, double value) {
    std::uint64_t bits;
    std::memcpy(&bits, &value, sizeof(bits));
    write_uint<std::uint64_t>(os, bits);
}

inline void write_f32(std::ostream& os, float value) {
    std::uint32_t bits;
    std::memcpy(&bits, &value, sizeof(bits));
    write_uint<std::uint32_t>(os, bits);
}

inline void write_string16(std::ostream& os, const std::string& s) {
    if (s.size() > 0xFFFF) throw IoError("string too long for u16 length prefix");
    write_uint<std::uint16_t>(os, static_cast<std::uint16_t>(s.size()));
    write_bytes(os, s.data(), s.size());
}

inline void read_bytes(std::istream& is, void* p, std::size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) {
        throw CorruptionError("unexpected end of file");
    }
}

template <typename T>
T read_uint(std::istream& is) {
    static_assert(std::is_unsigned_v<T>);
    unsigned char buf[sizeof(T)];
    read_bytes(is, buf, sizeof(T));
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        value |= static_cast<T>(buf[i]) << (8 * i);
    }
    return value;
}

inline double read_f64(std::istream& is) {
    const std::uint64_t bits = read_uint<std::uint64_t>(is);
    double value;
    std::memcpy(&value, &bits, sizeof(value));
    return value;
}

inline float read_f32(std::istream& is) {
    const std::uint32_t bits = read_uint<std::uint32_t>(is);
    float value;
    std::memcpy(&value, &bits, sizeof(value));
    return value;
}

inline std::string read_string16(std::istream& is) {
    const std::uint16_t n = read_uint<std::uint16_t>(is);
    std::string s(n, '\0');
    if (n > 0) read_bytes(is, s.data(), n);
    return s;
}

inline void expect_magic(std::istream& is, const char magic[4],
                         const std::string& what) {
    char buf[4];
    is.read(buf, 4);
    if (is.gcount() != 4 || std::memcmp(buf, magic, 4) != 0) {
        throw FormatError(what + ": bad magic bytes");
    }
}

inline void expect_eof(std::istream& is, const std::string& what) {
    if (is.peek() != std::char_traits<char>::eof()) {
        throw CorruptionError(what + ": trailing bytes after payload");
    }
}

}  // namespace sgpt::binio
