#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "kvq/errors.hpp"
#include "kvq/matrix.hpp"

// Tensor file format "KVQT", little-endian:
//   magic "KVQT" (4 bytes), version u32 = 1, rows u64, cols u64,
//   then rows*cols IEEE-754 binary32 values, row-major.
// No padding, no footer.

namespace kvq {

inline constexpr char kTensorMagic[4] = {'K', 'V', 'Q', 'T'};
inline constexpr std::uint32_t kTensorVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
}

// Readers take the running byte offset so failures can report where.
inline std::uint32_t get_u32(std::istream& is, std::uint64_t& off, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) {
        throw format_error(std::string("truncated while reading ") + what, off);
    }
    off += 4;
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& is, std::uint64_t& off, const char* what) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) {
        throw format_error(std::string("truncated while reading ") + what, off);
    }
    off += 8;
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline float get_f32(std::istream& is, std::uint64_t& off, const char* what) {
    std::uint32_t bits = get_u32(is, off, what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline void check_magic(std::istream& is, std::uint64_t& off, const char expect[4],
                        const char* name) {
    char m[4];
    if (!is.read(m, 4)) {
        throw format_error(std::string("truncated before ") + name + " magic", off);
    }
    if (std::memcmp(m, expect, 4) != 0) {
        throw format_error(std::string("bad ") + name + " magic", off);
    }
    off += 4;
}

}  // namespace detail

inline void write_tensor(std::ostream& os, const DenseMatrix& m) {
    os.write(kTensorMagic, 4);
    detail::put_u32(os, kTensorVersion);
    detail::put_u64(os, m.rows);
    detail::put_u64(os, m.cols);
    for (float v : m.data) detail::put_f32(os, v);
}

inline void write_tensor(const std::string& path, const DenseMatrix& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw format_error("cannot open for writing: " + path, 0);
    write_tensor(os, m);
    if (!os) throw format_error("write failed: " + path, 0);
}

inline DenseMatrix read_tensor(std::istream& is, std::uint64_t& off) {
    detail::check_magic(is, off, kTensorMagic, "tensor");
    std::uint32_t version = detail::get_u32(is, off, "version");
    if (version != kTensorVersion) {
        throw format_error("unsupported tensor version " + std::to_string(version), off - 4);
    }
    std::uint64_t rows = detail::get_u64(is, off, "rows");
    std::uint64_t cols = detail::get_u64(is, off, "cols");
    DenseMatrix m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
    for (std::size_t i = 0; i < m.data.size(); ++i) {
        m.data[i] = detail::get_f32(is, off, "tensor data");
    }
    if (!m.all_finite()) {
        throw format_error("tensor contains non-finite values", off);
    }
    return m;
}

inline DenseMatrix read_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw format_error("cannot open for reading: " + path, 0);
    std::uint64_t off = 0;
    DenseMatrix m = read_tensor(is, off);
    // Trailing bytes mean the header lied about the shape.
    is.peek();
    if (!is.eof()) {
        throw format_error("trailing bytes after tensor data", off);
    }
    return m;
}

}  // namespace kvq
