#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "kvq/errors.hpp"
#include "kvq/matrix.hpp"
#include "kvq/quantize.hpp"

// Fused attention kernels over packed caches. Dequantization never happens as
// a separate pass; the channel scales are folded into the operands instead:
//   q . k_deq   = (q * s) . k_dis + q . alpha          (key side)
//   (w V_deq)_i = s_i * (w . V_dis_col_i) + alpha_i * sum(w)   (value side)
// with s_i = (beta_i - alpha_i) / (2^b - 1). Codes are unpacked one word at a
// time inside the innermost loop; no n x d full-precision buffer exists at any
// point (per-worker scratch is O(b_n * d + d)).
//
// Determinism: every output element is owned by exactly one worker and its
// accumulator is fed in a fixed order (tokens ascending, words ascending
// within a token, lane stripes summed last). That order depends only on the
// segment, never on b_h, b_n, or P, so no configuration change reorders a
// sum and results are bit-identical across configurations.

namespace kvq {

struct KernelConfig {
    std::size_t head_block = 32;  // b_h: packed words per value-side output block
    std::size_t token_block = 64; // b_n: tokens per key-side block
    int workers = 1;              // P

    void validate() const {
        if (head_block < 1 || token_block < 1 || workers < 1) {
            throw config_error("kernel blocks and workers must be >= 1");
        }
    }
};

namespace detail {

// Byte -> unpacked codes, as floats so the inner loops are pure FMA fodder.
// Entry k of byte w is (w >> (8 - N*(k+1))) & (2^N - 1), the MSB-first lane.
template <int N>
struct ByteTable {
    static constexpr int kGroup = 8 / N;
    using Row = std::array<float, kGroup>;

    static constexpr std::array<Row, 256> make() {
        std::array<Row, 256> t{};
        for (int w = 0; w < 256; ++w) {
            for (int k = 0; k < kGroup; ++k) {
                t[static_cast<std::size_t>(w)][static_cast<std::size_t>(k)] =
                    static_cast<float>((w >> (8 - N * (k + 1))) & ((1 << N) - 1));
            }
        }
        return t;
    }

    static constexpr std::array<Row, 256> table = make();
};

template <int N>
inline float dot_row_byte(const float* qs, const std::uint8_t* row, std::size_t words) {
    const auto& lut = ByteTable<N>::table;
    constexpr int group = ByteTable<N>::kGroup;
    // Lane-striped partials keep the inner loop one vector FMA per byte; the
    // stripe order is fixed by the segment alone, so sums stay deterministic.
    float acc[group] = {};
    for (std::size_t w = 0; w < words; ++w) {
        const auto& lane = lut[row[w]];
        const float* qw = qs + w * static_cast<std::size_t>(group);
        for (int k = 0; k < group; ++k) {
            acc[k] += qw[k] * lane[static_cast<std::size_t>(k)];
        }
    }
    float total = 0.0f;
    for (int k = 0; k < group; ++k) total += acc[k];
    return total;
}

template <int N>
inline void axpy_row_byte(float wj, const float* /*unused*/, const std::uint8_t* row,
                          std::size_t w0, std::size_t w1, float* acc) {
    const auto& lut = ByteTable<N>::table;
    for (std::size_t w = w0; w < w1; ++w) {
        const auto& lane = lut[row[w]];
        float* out = acc + (w - w0) * static_cast<std::size_t>(ByteTable<N>::kGroup);
        for (int k = 0; k < ByteTable<N>::kGroup; ++k) {
            out[static_cast<std::size_t>(k)] += wj * lane[static_cast<std::size_t>(k)];
        }
    }
}

// Wide-word fallback (M = 16 or 32): shift/mask per element, no table.
inline float dot_row_wide(const float* qs, const PackedBuffer& buf, std::size_t word0,
                          std::size_t words) {
    const std::size_t group = buf.codes_per_word();
    const int n = buf.code_bits;
    const std::uint32_t mask = (n >= 32) ? 0xffffffffu : ((1u << n) - 1u);
    float acc = 0.0f;
    for (std::size_t w = 0; w < words; ++w) {
        std::uint32_t word = buf.word_at(word0 + w);
        for (std::size_t k = 0; k < group; ++k) {
            int shift = buf.word_bits - n * static_cast<int>(k + 1);
            acc += qs[w * group + k] * static_cast<float>((word >> shift) & mask);
        }
    }
    return acc;
}

inline void axpy_row_wide(float wj, const PackedBuffer& buf, std::size_t word0,
                          std::size_t w0, std::size_t w1, float* acc) {
    const std::size_t group = buf.codes_per_word();
    const int n = buf.code_bits;
    const std::uint32_t mask = (n >= 32) ? 0xffffffffu : ((1u << n) - 1u);
    for (std::size_t w = w0; w < w1; ++w) {
        std::uint32_t word = buf.word_at(word0 + w);
        float* out = acc + (w - w0) * group;
        for (std::size_t k = 0; k < group; ++k) {
            int shift = buf.word_bits - n * static_cast<int>(k + 1);
            out[k] += wj * static_cast<float>((word >> shift) & mask);
        }
    }
}

inline float dot_packed_row(const float* qs, const QuantizedSegment& seg, std::size_t row) {
    const std::size_t wpr = seg.words_per_row();
    if (seg.codes.word_bits == 8) {
        const std::uint8_t* p = seg.codes.bytes.data() + row * wpr;
        switch (seg.codes.code_bits) {
            case 1: return dot_row_byte<1>(qs, p, wpr);
            case 2: return dot_row_byte<2>(qs, p, wpr);
            case 4: return dot_row_byte<4>(qs, p, wpr);
            default: return dot_row_byte<8>(qs, p, wpr);
        }
    }
    return dot_row_wide(qs, seg.codes, row * wpr, wpr);
}

inline void axpy_packed_row(float wj, const QuantizedSegment& seg, std::size_t row,
                            std::size_t w0, std::size_t w1, float* acc) {
    const std::size_t wpr = seg.words_per_row();
    if (seg.codes.word_bits == 8) {
        const std::uint8_t* p = seg.codes.bytes.data() + row * wpr;
        switch (seg.codes.code_bits) {
            case 1: axpy_row_byte<1>(wj, nullptr, p, w0, w1, acc); return;
            case 2: axpy_row_byte<2>(wj, nullptr, p, w0, w1, acc); return;
            case 4: axpy_row_byte<4>(wj, nullptr, p, w0, w1, acc); return;
            default: axpy_row_byte<8>(wj, nullptr, p, w0, w1, acc); return;
        }
    }
    axpy_row_wide(wj, seg.codes, row * wpr, w0, w1, acc);
}

// Static contiguous division: worker pid runs task indices
// [y*pid, min(y*(pid+1), total)) with y = ceil(total / P).
template <typename Fn>
inline void parallel_workers(int workers, std::size_t total, Fn&& fn) {
    if (total == 0) return;
    std::size_t p = static_cast<std::size_t>(workers);
    std::size_t y = (total + p - 1) / p;
    if (workers == 1 || y >= total) {
        fn(0, std::size_t{0}, total);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(p - 1);
    for (std::size_t pid = 1; pid < p; ++pid) {
        std::size_t s = y * pid;
        std::size_t t = std::min(y * (pid + 1), total);
        if (s >= t) break;
        pool.emplace_back([&fn, pid, s, t] { fn(static_cast<int>(pid), s, t); });
    }
    fn(0, std::size_t{0}, std::min(y, total));
    for (auto& th : pool) th.join();
}

// The q-side scaled vector, padded with zeros out to the packed row stride so
// pad lanes contribute exactly nothing. Returns q . alpha as the constant term.
inline float scale_query(std::span<const float> q, const QuantizedSegment& seg,
                         std::vector<float>& qs) {
    const float levels = static_cast<float>((1u << seg.bitwidth) - 1u);
    qs.assign(seg.codes_per_row(), 0.0f);
    float qdota = 0.0f;
    for (std::size_t c = 0; c < seg.dim; ++c) {
        float range = seg.stats.beta[c] - seg.stats.alpha[c];
        qs[c] = range > 0.0f ? q[c] * (range / levels) : 0.0f;
        qdota += q[c] * seg.stats.alpha[c];
    }
    return qdota;
}

// Long segments amortize a per-query byte table: T[w][v] is the dot of the
// scaled query chunk for packed word w with the codes of byte value v, so a
// row dot collapses to words_per_row table adds. The build costs 256 FMAs
// per lane, hence the token threshold.
constexpr std::size_t kQkTableMinTokens = 512;

template <int N>
inline void fill_query_table_word(const float* qw, float* t) {
    const auto& lut = ByteTable<N>::table;
    constexpr int group = ByteTable<N>::kGroup;
    for (int v = 0; v < 256; ++v) {
        float acc = 0.0f;
        for (int k = 0; k < group; ++k) {
            acc += qw[k] * lut[static_cast<std::size_t>(v)][static_cast<std::size_t>(k)];
        }
        t[v] = acc;
    }
}

inline void build_query_table(const std::vector<float>& qs, const QuantizedSegment& seg,
                              std::vector<float>& qtab) {
    const std::size_t wpr = seg.words_per_row();
    qtab.resize(wpr * 256);
    for (std::size_t w = 0; w < wpr; ++w) {
        const float* qw = qs.data() + w * 8;
        float* t = qtab.data() + w * 256;
        switch (seg.codes.code_bits) {
            case 1: fill_query_table_word<1>(qw, t); break;
            case 2: fill_query_table_word<2>(qw, t); break;
            case 4: fill_query_table_word<4>(qw, t); break;
            default: fill_query_table_word<8>(qw, t); break;
        }
    }
}

inline float dot_table_row(const float* qtab, const std::uint8_t* row, std::size_t words) {
    // Four stripes hide the add latency; the summation order is fixed.
    float a0 = 0.0f, a1 = 0.0f, a2 = 0.0f, a3 = 0.0f;
    std::size_t w = 0;
    for (; w + 4 <= words; w += 4) {
        a0 += qtab[(w + 0) * 256 + row[w + 0]];
        a1 += qtab[(w + 1) * 256 + row[w + 1]];
        a2 += qtab[(w + 2) * 256 + row[w + 2]];
        a3 += qtab[(w + 3) * 256 + row[w + 3]];
    }
    for (; w < words; ++w) a0 += qtab[w * 256 + row[w]];
    return (a0 + a1) + (a2 + a3);
}

inline void qk_head(std::span<const float> q, const QuantizedSegment& seg,
                    std::size_t token_block, std::vector<float>& qs, std::vector<float>& qtab,
                    float* out) {
    // qs and qtab are hoisted scratch: filled once per head, reused by every
    // token block.
    float qdota = scale_query(q, seg, qs);
    const std::size_t wpr = seg.words_per_row();
    const bool use_table = seg.codes.word_bits == 8 && seg.tokens >= kQkTableMinTokens;
    if (use_table) build_query_table(qs, seg, qtab);
    for (std::size_t b0 = 0; b0 < seg.tokens; b0 += token_block) {
        std::size_t b1 = std::min(b0 + token_block, seg.tokens);
        if (use_table) {
            const std::uint8_t* rows = seg.codes.bytes.data();
            for (std::size_t j = b0; j < b1; ++j) {
                out[j] = dot_table_row(qtab.data(), rows + j * wpr, wpr) + qdota;
            }
        } else {
            for (std::size_t j = b0; j < b1; ++j) {
                out[j] = dot_packed_row(qs.data(), seg, j) + qdota;
            }
        }
    }
}

inline void wv_block(std::span<const float> w, float wsum, const QuantizedSegment& seg,
                     std::size_t w0, std::size_t w1, std::vector<float>& acc, float* out) {
    const std::size_t group = seg.codes.codes_per_word();
    acc.assign((w1 - w0) * group, 0.0f);
    for (std::size_t j = 0; j < seg.tokens; ++j) {
        axpy_packed_row(w[j], seg, j, w0, w1, acc.data());
    }
    const float levels = static_cast<float>((1u << seg.bitwidth) - 1u);
    for (std::size_t lane = 0; lane < (w1 - w0) * group; ++lane) {
        std::size_t c = w0 * group + lane;
        if (c >= seg.dim) break;  // pad lanes
        float range = seg.stats.beta[c] - seg.stats.alpha[c];
        float step = range > 0.0f ? range / levels : 0.0f;
        out[c] = step * acc[lane] + seg.stats.alpha[c] * wsum;
    }
}

inline std::size_t wv_blocks_per_head(const QuantizedSegment& seg, std::size_t head_block) {
    return (seg.words_per_row() + head_block - 1) / head_block;
}

inline void check_segments_uniform(std::span<const QuantizedSegment> segs, const char* who) {
    for (std::size_t h = 1; h < segs.size(); ++h) {
        if (segs[h].tokens != segs[0].tokens || segs[h].dim != segs[0].dim ||
            segs[h].bitwidth != segs[0].bitwidth ||
            segs[h].codes.word_bits != segs[0].codes.word_bits) {
            throw domain_error(std::string(who) + ": head segments have mismatched shapes");
        }
    }
}

}  // namespace detail

inline std::vector<float> qk_scores(std::span<const float> q, const QuantizedSegment& keys,
                                    const KernelConfig& cfg) {
    cfg.validate();
    if (q.size() != keys.dim) {
        throw domain_error("qk_scores: query length " + std::to_string(q.size()) +
                           " does not match segment dim " + std::to_string(keys.dim));
    }
    std::vector<float> scores(keys.tokens, 0.0f);
    std::vector<float> qs;
    std::vector<float> qtab;
    detail::qk_head(q, keys, cfg.token_block, qs, qtab, scores.data());
    return scores;
}

inline std::vector<float> wv_output(std::span<const float> w, const QuantizedSegment& values,
                                    const KernelConfig& cfg) {
    cfg.validate();
    if (w.size() != values.tokens) {
        throw domain_error("wv_output: weight length " + std::to_string(w.size()) +
                           " does not match segment tokens " + std::to_string(values.tokens));
    }
    std::vector<float> out(values.dim, 0.0f);
    float wsum = 0.0f;
    for (float v : w) wsum += v;
    std::size_t blocks = detail::wv_blocks_per_head(values, cfg.head_block);
    detail::parallel_workers(cfg.workers, blocks, [&](int, std::size_t s, std::size_t t) {
        std::vector<float> acc;
        for (std::size_t b = s; b < t; ++b) {
            std::size_t w0 = b * cfg.head_block;
            std::size_t w1 = std::min(w0 + cfg.head_block, values.words_per_row());
            detail::wv_block(w, wsum, values, w0, w1, acc, out.data());
        }
    });
    return out;
}

// Batched forms, one segment per head. qk parallelizes over heads; wv over
// (head, output-block) tasks with the contiguous per-worker ranges described
// above, each worker re-reading its weight stripe only on a head change.

inline DenseMatrix qk_scores(const DenseMatrix& queries,
                             std::span<const QuantizedSegment> keys, const KernelConfig& cfg) {
    cfg.validate();
    if (queries.rows != keys.size()) {
        throw domain_error("qk_scores: query rows != head count");
    }
    if (keys.empty()) return DenseMatrix();
    detail::check_segments_uniform(keys, "qk_scores");
    if (queries.cols != keys[0].dim) {
        throw domain_error("qk_scores: query cols do not match segment dim");
    }
    DenseMatrix scores(keys.size(), keys[0].tokens);
    detail::parallel_workers(cfg.workers, keys.size(), [&](int, std::size_t s, std::size_t t) {
        std::vector<float> qs;
        std::vector<float> qtab;
        for (std::size_t h = s; h < t; ++h) {
            detail::qk_head(queries.row_span(h), keys[h], cfg.token_block, qs, qtab,
                            scores.row(h));
        }
    });
    return scores;
}

inline DenseMatrix wv_output(const DenseMatrix& weights,
                             std::span<const QuantizedSegment> values,
                             const KernelConfig& cfg) {
    cfg.validate();
    if (weights.rows != values.size()) {
        throw domain_error("wv_output: weight rows != head count");
    }
    if (values.empty()) return DenseMatrix();
    detail::check_segments_uniform(values, "wv_output");
    if (weights.cols != values[0].tokens) {
        throw domain_error("wv_output: weight cols do not match segment tokens");
    }
    std::vector<float> wsums(values.size(), 0.0f);
    for (std::size_t h = 0; h < values.size(); ++h) {
        for (float v : weights.row_span(h)) wsums[h] += v;
    }
    DenseMatrix out(values.size(), values[0].dim);
    std::size_t x = detail::wv_blocks_per_head(values[0], cfg.head_block);
    detail::parallel_workers(
        cfg.workers, values.size() * x, [&](int, std::size_t s, std::size_t t) {
            std::vector<float> acc;
            for (std::size_t task = s; task < t; ++task) {
                std::size_t h = task / x;
                std::size_t b = task % x;
                std::size_t w0 = b * cfg.head_block;
                std::size_t w1 = std::min(w0 + cfg.head_block, values[h].words_per_row());
                detail::wv_block(weights.row_span(h), wsums[h], values[h], w0, w1, acc,
                                 out.row(h));
            }
        });
    return out;
}

// Dense reference products. These double as the full-precision baseline path:
// naive_qk is q K^T over an unquantized cache, naive_wv is w V.

inline std::vector<float> naive_qk(std::span<const float> q, const DenseMatrix& k) {
    if (q.size() != k.cols) {
        throw domain_error("naive_qk: query length does not match key cols");
    }
    std::vector<float> scores(k.rows, 0.0f);
    for (std::size_t j = 0; j < k.rows; ++j) {
        const float* row = k.row(j);
        float acc = 0.0f;
        for (std::size_t c = 0; c < k.cols; ++c) acc += q[c] * row[c];
        scores[j] = acc;
    }
    return scores;
}

inline std::vector<float> naive_wv(std::span<const float> w, const DenseMatrix& v) {
    if (w.size() != v.rows) {
        throw domain_error("naive_wv: weight length does not match value rows");
    }
    std::vector<float> out(v.cols, 0.0f);
    for (std::size_t j = 0; j < v.rows; ++j) {
        const float* row = v.row(j);
        float wj = w[j];
        for (std::size_t c = 0; c < v.cols; ++c) out[c] += wj * row[c];
    }
    return out;
}

}  // namespace kvq
