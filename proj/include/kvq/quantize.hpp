#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "kvq/bitpack.hpp"
#include "kvq/errors.hpp"
#include "kvq/matrix.hpp"
#include "kvq/tensor_io.hpp"

// Uniform integer quantization with per-channel bounds:
//   code  = round((x - alpha_i) * (2^b - 1) / (beta_i - alpha_i)), saturating
//   x_deq = code * (beta_i - alpha_i) / (2^b - 1) + alpha_i
// Rounding is round-half-away-from-zero. A degenerate channel (beta == alpha)
// maps to code 0 and dequantizes to alpha exactly.

namespace kvq {

struct ChannelStats {
    std::vector<float> alpha;  // per-channel minimum
    std::vector<float> beta;   // per-channel maximum

    std::size_t dim() const { return alpha.size(); }
};

enum class QuantMode { channel_wise, global };

struct QuantizationConfig {
    int bitwidth = 8;  // in {1, 2, 4, 8}
    QuantMode mode = QuantMode::channel_wise;
    int word_bits = 8;  // pack width M; bitwidth must divide it

    void validate() const {
        if (bitwidth != 1 && bitwidth != 2 && bitwidth != 4 && bitwidth != 8) {
            throw config_error("bitwidth must be 1, 2, 4, or 8");
        }
        detail::validate_widths(bitwidth, word_bits);
    }
};

struct QuantizedSegment {
    PackedBuffer codes;
    ChannelStats stats;
    std::size_t tokens = 0;
    std::size_t dim = 0;
    int bitwidth = 0;

    // Codes per stored row: dim rounded up to a whole number of pack groups,
    // so every row starts on a word boundary. Pad lanes hold code 0 and are
    // dropped on dequantize; kernels zero their contribution.
    std::size_t codes_per_row() const {
        std::size_t group = codes.codes_per_word();
        return (dim + group - 1) / group * group;
    }

    std::size_t words_per_row() const { return codes_per_row() / codes.codes_per_word(); }
};

inline ChannelStats compute_stats(const DenseMatrix& m, QuantMode mode) {
    if (m.empty()) throw domain_error("compute_stats: empty matrix");
    ChannelStats s;
    s.alpha.resize(m.cols);
    s.beta.resize(m.cols);
    if (mode == QuantMode::channel_wise) {
        for (std::size_t c = 0; c < m.cols; ++c) {
            float lo = m.at(0, c), hi = m.at(0, c);
            for (std::size_t r = 1; r < m.rows; ++r) {
                lo = std::min(lo, m.at(r, c));
                hi = std::max(hi, m.at(r, c));
            }
            s.alpha[c] = lo;
            s.beta[c] = hi;
        }
    } else {
        float lo = m.data[0], hi = m.data[0];
        for (float v : m.data) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        std::fill(s.alpha.begin(), s.alpha.end(), lo);
        std::fill(s.beta.begin(), s.beta.end(), hi);
    }
    return s;
}

inline QuantizedSegment quantize(const DenseMatrix& m, const ChannelStats& stats, int bitwidth,
                                 int word_bits = 8) {
    if (stats.dim() != m.cols || stats.beta.size() != m.cols) {
        throw domain_error("quantize: stats dim " + std::to_string(stats.dim()) +
                           " does not match matrix cols " + std::to_string(m.cols));
    }
    detail::validate_widths(bitwidth, word_bits);
    const float levels = static_cast<float>((1u << bitwidth) - 1u);
    const std::size_t group = static_cast<std::size_t>(word_bits / bitwidth);
    const std::size_t stride = (m.cols + group - 1) / group * group;

    std::vector<float> inv_step(m.cols);
    for (std::size_t c = 0; c < m.cols; ++c) {
        float range = stats.beta[c] - stats.alpha[c];
        inv_step[c] = range > 0.0f ? levels / range : 0.0f;
    }

    std::vector<std::uint32_t> codes(m.rows * stride, 0u);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const float* src = m.row(r);
        std::uint32_t* dst = codes.data() + r * stride;
        for (std::size_t c = 0; c < m.cols; ++c) {
            // Saturates when x is outside [alpha, beta] (stats reused on fresh data).
            float t = std::round((src[c] - stats.alpha[c]) * inv_step[c]);
            t = std::clamp(t, 0.0f, levels);
            dst[c] = static_cast<std::uint32_t>(t);
        }
    }

    QuantizedSegment seg;
    seg.codes = pack(codes, bitwidth, word_bits);
    seg.stats = stats;
    seg.tokens = m.rows;
    seg.dim = m.cols;
    seg.bitwidth = bitwidth;
    return seg;
}

inline DenseMatrix dequantize(const QuantizedSegment& seg) {
    const float levels = static_cast<float>((1u << seg.bitwidth) - 1u);
    std::vector<float> step(seg.dim);
    for (std::size_t c = 0; c < seg.dim; ++c) {
        float range = seg.stats.beta[c] - seg.stats.alpha[c];
        step[c] = range > 0.0f ? range / levels : 0.0f;
    }
    std::vector<std::uint32_t> codes = unpack(seg.codes);
    const std::size_t stride = seg.codes_per_row();
    DenseMatrix m(seg.tokens, seg.dim);
    for (std::size_t r = 0; r < seg.tokens; ++r) {
        for (std::size_t c = 0; c < seg.dim; ++c) {
            m.at(r, c) =
                static_cast<float>(codes[r * stride + c]) * step[c] + seg.stats.alpha[c];
        }
    }
    return m;
}

// Packed segment file format "KVQP", little-endian:
//   magic "KVQP", version u32 = 1, N u8, M u8, reserved u16 = 0,
//   logical_count u64, words (M/8 bytes each), d u64, alpha f32 x d, beta f32 x d.

inline constexpr char kPackedMagic[4] = {'K', 'V', 'Q', 'P'};
inline constexpr std::uint32_t kPackedVersion = 1;

inline void write_segment(std::ostream& os, const QuantizedSegment& seg) {
    os.write(kPackedMagic, 4);
    detail::put_u32(os, kPackedVersion);
    os.put(static_cast<char>(seg.codes.code_bits));
    os.put(static_cast<char>(seg.codes.word_bits));
    os.put(0);
    os.put(0);
    detail::put_u64(os, seg.codes.logical_count);
    os.write(reinterpret_cast<const char*>(seg.codes.bytes.data()),
             static_cast<std::streamsize>(seg.codes.bytes.size()));
    detail::put_u64(os, seg.dim);
    for (float v : seg.stats.alpha) detail::put_f32(os, v);
    for (float v : seg.stats.beta) detail::put_f32(os, v);
}

inline void write_segment(const std::string& path, const QuantizedSegment& seg) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw format_error("cannot open for writing: " + path, 0);
    write_segment(os, seg);
    if (!os) throw format_error("write failed: " + path, 0);
}

inline QuantizedSegment read_segment(std::istream& is, std::uint64_t& off) {
    detail::check_magic(is, off, kPackedMagic, "packed segment");
    std::uint32_t version = detail::get_u32(is, off, "version");
    if (version != kPackedVersion) {
        throw format_error("unsupported segment version " + std::to_string(version), off - 4);
    }
    unsigned char hdr[4];
    if (!is.read(reinterpret_cast<char*>(hdr), 4)) {
        throw format_error("truncated while reading width header", off);
    }
    off += 4;
    QuantizedSegment seg;
    seg.codes.code_bits = hdr[0];
    seg.codes.word_bits = hdr[1];
    try {
        detail::validate_widths(seg.codes.code_bits, seg.codes.word_bits);
    } catch (const config_error& e) {
        // Garbage widths in a file are a format problem, not a caller mistake.
        throw format_error(std::string("stored widths invalid: ") + e.what(), off - 4);
    }
    seg.codes.logical_count =
        static_cast<std::size_t>(detail::get_u64(is, off, "logical_count"));
    std::size_t nbytes = seg.codes.word_count() * (seg.codes.word_bits / 8);
    seg.codes.bytes.resize(nbytes);
    if (nbytes > 0 &&
        !is.read(reinterpret_cast<char*>(seg.codes.bytes.data()),
                 static_cast<std::streamsize>(nbytes))) {
        throw format_error("truncated packed words", off);
    }
    off += nbytes;
    seg.dim = static_cast<std::size_t>(detail::get_u64(is, off, "dim"));
    seg.stats.alpha.resize(seg.dim);
    seg.stats.beta.resize(seg.dim);
    for (std::size_t i = 0; i < seg.dim; ++i) {
        seg.stats.alpha[i] = detail::get_f32(is, off, "alpha");
    }
    for (std::size_t i = 0; i < seg.dim; ++i) {
        seg.stats.beta[i] = detail::get_f32(is, off, "beta");
    }
    seg.bitwidth = seg.codes.code_bits;
    std::size_t stride = seg.codes_per_row();
    if (stride == 0 ? seg.codes.logical_count != 0 : seg.codes.logical_count % stride != 0) {
        throw format_error("logical_count does not cover whole rows", off);
    }
    seg.tokens = stride == 0 ? 0 : seg.codes.logical_count / stride;
    return seg;
}

inline QuantizedSegment read_segment(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw format_error("cannot open for reading: " + path, 0);
    std::uint64_t off = 0;
    return read_segment(is, off);
}

}  // namespace kvq
