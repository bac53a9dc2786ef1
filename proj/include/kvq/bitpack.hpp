#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kvq/errors.hpp"

// Pack N-bit codes into M-bit words, MSB-first: within a group of M/N codes,
// code i occupies bits [M - N*(i+1), M - N*i). The last group is zero-padded;
// pad codes sit beyond logical_count and never round-trip back out.

namespace kvq {

struct PackedBuffer {
    std::vector<std::uint8_t> bytes;  // words stored little-endian, M/8 bytes each
    int code_bits = 0;                // N
    int word_bits = 8;                // M
    std::size_t logical_count = 0;    // valid codes before padding

    std::size_t codes_per_word() const {
        return static_cast<std::size_t>(word_bits / code_bits);
    }

    std::size_t word_count() const {
        std::size_t g = codes_per_word();
        return (logical_count + g - 1) / g;
    }

    std::size_t byte_size() const { return bytes.size(); }

    std::uint32_t word_at(std::size_t i) const {
        std::size_t nb = static_cast<std::size_t>(word_bits) / 8;
        std::uint32_t w = 0;
        for (std::size_t b = 0; b < nb; ++b) {
            w |= static_cast<std::uint32_t>(bytes[i * nb + b]) << (8 * b);
        }
        return w;
    }
};

namespace detail {

inline void validate_widths(int code_bits, int word_bits) {
    if (code_bits < 1 || word_bits < 8 || word_bits > 32 || word_bits % 8 != 0) {
        throw config_error("word bits must be 8, 16, or 32 and code bits >= 1");
    }
    if (word_bits % code_bits != 0) {
        throw config_error("code bits " + std::to_string(code_bits) +
                           " must divide word bits " + std::to_string(word_bits));
    }
}

inline void store_word(std::vector<std::uint8_t>& bytes, std::size_t index, std::uint32_t word,
                       int word_bits) {
    std::size_t nb = static_cast<std::size_t>(word_bits) / 8;
    for (std::size_t b = 0; b < nb; ++b) {
        bytes[index * nb + b] = static_cast<std::uint8_t>(word >> (8 * b));
    }
}

}  // namespace detail

inline PackedBuffer pack(std::span<const std::uint32_t> codes, int code_bits, int word_bits = 8) {
    detail::validate_widths(code_bits, word_bits);
    const std::uint32_t limit = code_bits >= 32 ? 0xffffffffu : (1u << code_bits) - 1u;
    const std::size_t group = static_cast<std::size_t>(word_bits / code_bits);

    PackedBuffer buf;
    buf.code_bits = code_bits;
    buf.word_bits = word_bits;
    buf.logical_count = codes.size();
    const std::size_t words = buf.word_count();
    buf.bytes.assign(words * (word_bits / 8), 0);

    for (std::size_t w = 0; w < words; ++w) {
        std::uint32_t acc = 0;
        for (std::size_t i = 0; i < group; ++i) {
            std::size_t idx = w * group + i;
            std::uint32_t code = idx < codes.size() ? codes[idx] : 0u;
            if (code > limit) {
                throw domain_error("code " + std::to_string(code) + " exceeds " +
                                   std::to_string(code_bits) + "-bit range");
            }
            acc |= code << (word_bits - code_bits * static_cast<int>(i + 1));
        }
        detail::store_word(buf.bytes, w, acc, word_bits);
    }
    return buf;
}

inline std::vector<std::uint32_t> unpack(const PackedBuffer& buf) {
    detail::validate_widths(buf.code_bits, buf.word_bits);
    const std::size_t group = buf.codes_per_word();
    const std::uint32_t mask =
        buf.code_bits >= 32 ? 0xffffffffu : (1u << buf.code_bits) - 1u;

    std::vector<std::uint32_t> codes(buf.logical_count);
    for (std::size_t idx = 0; idx < buf.logical_count; ++idx) {
        std::uint32_t word = buf.word_at(idx / group);
        std::size_t i = idx % group;
        int shift = buf.word_bits - buf.code_bits * static_cast<int>(i + 1);
        codes[idx] = (word >> shift) & mask;
    }
    return codes;
}

}  // namespace kvq
