#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "kvq/bitpack.hpp"
#include "kvq/calibrate.hpp"
#include "kvq/kernels.hpp"
#include "kvq/kvcache.hpp"
#include "kvq/matrix.hpp"
#include "kvq/quantize.hpp"
#include "kvq/reference.hpp"

// In-binary property suites behind `selftest`. Anything here is also covered
// by the test suite; this is the field-diagnostic subset that ships in the
// tool itself.

namespace kvq {

struct SelftestOptions {
    // Flips one bit of a packed buffer inside the roundtrip suite. The suite
    // must then fail; a pass under injection means the check is vacuous.
    bool inject_bitflip = false;
};

struct SelftestResult {
    std::string suite;
    bool passed = true;
    std::string detail;
};

namespace detail {

inline bool rel_close(float a, float b, float tol, float floor = 1e-6f) {
    float scale = std::max(std::abs(b), floor);
    return std::abs(a - b) <= tol * scale;
}

// Elementwise comparison of two score rows at a relative tolerance measured
// against the row's largest magnitude; near-zero entries of a row whose other
// entries are O(10) carry rounding noise from the full dot product, so a
// per-element denominator would be dishonest.
inline bool rows_close(std::span<const float> got, std::span<const float> want, float tol) {
    float rowmax = 0.0f;
    for (float v : want) rowmax = std::max(rowmax, std::abs(v));
    for (std::size_t i = 0; i < got.size(); ++i) {
        if (!rel_close(got[i], want[i], tol, rowmax)) return false;
    }
    return true;
}

inline DenseMatrix random_matrix(std::mt19937_64& eng, std::size_t rows, std::size_t cols,
                                 float lo, float hi) {
    std::uniform_real_distribution<float> dist(lo, hi);
    DenseMatrix m(rows, cols);
    for (float& v : m.data) v = dist(eng);
    return m;
}

}  // namespace detail

inline SelftestResult selftest_packing(const SelftestOptions& opt) {
    SelftestResult r{"packing_roundtrip", true, ""};
    struct Case {
        int n, m;
    };
    // Exhaustive single-word roundtrips per width pair.
    for (Case c : {Case{1, 8}, Case{2, 8}, Case{4, 8}, Case{8, 8}, Case{1, 16}, Case{2, 16}}) {
        std::size_t group = static_cast<std::size_t>(c.m / c.n);
        std::uint64_t limit = std::uint64_t{1} << c.m;
        for (std::uint64_t w = 0; w < limit; ++w) {
            std::vector<std::uint32_t> codes(group);
            for (std::size_t k = 0; k < group; ++k) {
                codes[k] = static_cast<std::uint32_t>(
                    (w >> (c.m - c.n * static_cast<int>(k + 1))) &
                    ((std::uint64_t{1} << c.n) - 1));
            }
            PackedBuffer packed = pack(codes, c.n, c.m);
            if (packed.word_at(0) != static_cast<std::uint32_t>(w) ||
                unpack(packed) != codes) {
                r.passed = false;
                r.detail = "roundtrip mismatch at word " + std::to_string(w) + " N=" +
                           std::to_string(c.n) + " M=" + std::to_string(c.m);
                return r;
            }
        }
    }
    // Worked examples.
    PackedBuffer ex1 = pack(std::vector<std::uint32_t>{3, 1, 0, 2}, 2, 8);
    if (ex1.word_at(0) != 210) {
        r.passed = false;
        r.detail = "[3,1,0,2] should pack to 210, got " + std::to_string(ex1.word_at(0));
        return r;
    }
    PackedBuffer ex2 = pack(std::vector<std::uint32_t>{1, 0, 1, 1, 0, 0, 1, 0}, 1, 8);
    if (ex2.word_at(0) != 178) {
        r.passed = false;
        r.detail = "[1,0,1,1,0,0,1,0] should pack to 178, got " + std::to_string(ex2.word_at(0));
        return r;
    }
    // Random multi-word buffers against the string-of-bits oracle, with the
    // optional injected corruption.
    std::mt19937_64 eng(41);
    for (int n : {1, 2, 4, 8}) {
        std::uniform_int_distribution<std::uint32_t> dist(0, (1u << n) - 1u);
        std::vector<std::uint32_t> codes(153);
        for (auto& c : codes) c = dist(eng);
        PackedBuffer packed = pack(codes, n, 8);
        if (opt.inject_bitflip && n == 4) packed.bytes[5] ^= 0x08;
        std::vector<std::uint32_t> words(packed.word_count());
        for (std::size_t i = 0; i < words.size(); ++i) words[i] = packed.word_at(i);
        if (words != oracle_pack(codes, n, 8) || unpack(packed) != codes) {
            r.passed = false;
            r.detail = "packed buffer disagrees with oracle at N=" + std::to_string(n) +
                       (opt.inject_bitflip ? " (bit flip injected)" : "");
            return r;
        }
    }
    return r;
}

inline SelftestResult selftest_quantization_bound() {
    SelftestResult r{"quantization_bound", true, ""};
    for (int b : {1, 2, 4, 8}) {
        const std::size_t d = 6, n = 257;
        DenseMatrix m(n, d);
        // Dense per-channel grids over distinct ranges.
        for (std::size_t c = 0; c < d; ++c) {
            float lo = -1.0f - static_cast<float>(c);
            float hi = 2.0f + 0.5f * static_cast<float>(c);
            for (std::size_t j = 0; j < n; ++j) {
                m.at(j, c) = lo + (hi - lo) * static_cast<float>(j) / static_cast<float>(n - 1);
            }
        }
        ChannelStats stats = compute_stats(m, QuantMode::channel_wise);
        DenseMatrix back = dequantize(quantize(m, stats, b));
        for (std::size_t c = 0; c < d; ++c) {
            float half_step = (stats.beta[c] - stats.alpha[c]) /
                              static_cast<float>((1u << b) - 1u) * 0.5f;
            // The grid deliberately hits exact half-step midpoints; allow the
            // quantizer's own float rounding to land an epsilon past the bound.
            for (std::size_t j = 0; j < n; ++j) {
                if (std::abs(back.at(j, c) - m.at(j, c)) > half_step * (1.0f + 1e-4f)) {
                    r.passed = false;
                    r.detail = "roundtrip error above half step at b=" + std::to_string(b);
                    return r;
                }
            }
        }
    }
    return r;
}

inline SelftestResult selftest_post_scale_qk() {
    SelftestResult r{"post_scale_qk", true, ""};
    std::mt19937_64 eng(42);
    for (int trial = 0; trial < 25; ++trial) {
        int b = std::array<int, 4>{1, 2, 4, 8}[static_cast<std::size_t>(trial) % 4];
        DenseMatrix k = detail::random_matrix(eng, 64, 24, -2.0f, 2.0f);
        DenseMatrix q = detail::random_matrix(eng, 1, 24, -1.0f, 1.0f);
        QuantizedSegment seg = quantize(k, compute_stats(k, QuantMode::channel_wise), b);
        std::vector<float> fused = qk_scores(q.row_span(0), seg, KernelConfig{4, 16, 1});
        std::vector<float> naive = naive_qk(q.row_span(0), dequantize(seg));
        if (!detail::rows_close(fused, naive, 1e-5f)) {
            r.passed = false;
            r.detail = "fused qk diverges from dequantized oracle at b=" + std::to_string(b);
            return r;
        }
    }
    return r;
}

inline SelftestResult selftest_post_scale_wv() {
    SelftestResult r{"post_scale_wv", true, ""};
    std::mt19937_64 eng(43);
    for (int trial = 0; trial < 25; ++trial) {
        int b = std::array<int, 4>{1, 2, 4, 8}[static_cast<std::size_t>(trial) % 4];
        DenseMatrix v = detail::random_matrix(eng, 48, 20, -3.0f, 1.0f);
        DenseMatrix w = detail::random_matrix(eng, 1, 48, 0.0f, 1.0f);
        QuantizedSegment seg = quantize(v, compute_stats(v, QuantMode::channel_wise), b);
        std::vector<float> fused = wv_output(w.row_span(0), seg, KernelConfig{2, 16, 2});
        std::vector<float> naive = naive_wv(w.row_span(0), dequantize(seg));
        if (!detail::rows_close(fused, naive, 1e-5f)) {
            r.passed = false;
            r.detail = "fused wv diverges from dequantized oracle at b=" + std::to_string(b);
            return r;
        }
    }
    return r;
}

inline SelftestResult selftest_calibration() {
    SelftestResult r{"calibration_transform", true, ""};
    std::mt19937_64 eng(44);
    std::uniform_real_distribution<float> dist(-5.0f, 5.0f);
    for (int trial = 0; trial < 200; ++trial) {
        float a = dist(eng), b = dist(eng);
        ScoreRange range{std::min(a, b), std::max(a, b)};
        CalibrationParams p{static_cast<float>(trial % 4), static_cast<float>((trial / 4) % 4)};
        float left = g_apply(range.gamma, range, p);
        float right = g_apply(range.delta, range, p);
        if (left != range.gamma - p.tau1 || right != range.delta - p.tau2) {
            r.passed = false;
            r.detail = "g endpoints off";
            return r;
        }
        if (p.identity() && g_apply(a, range, p) != a) {
            r.passed = false;
            r.detail = "(0,0) is not the identity";
            return r;
        }
    }
    // Shift invariance of the calibrated softmax.
    std::vector<float> row(32);
    for (float& v : row) v = dist(eng);
    CalibrationParams p{2.0f, 1.0f};
    std::vector<float> base = calibrated_softmax_concat(row, {}, p);
    std::vector<float> shifted_row = row;
    for (float& v : shifted_row) v += 7.25f;
    std::vector<float> shifted = calibrated_softmax_concat(shifted_row, {}, p);
    for (std::size_t i = 0; i < base.size(); ++i) {
        if (std::abs(base[i] - shifted[i]) > 1e-6f) {
            r.passed = false;
            r.detail = "calibrated softmax not shift-invariant";
            return r;
        }
    }
    return r;
}

inline SelftestResult selftest_hybrid_decode() {
    SelftestResult r{"hybrid_decode_oracle", true, ""};
    std::mt19937_64 eng(45);
    const std::size_t n = 96, d = 16, h = 2;
    std::vector<DenseMatrix> ks, vs;
    for (std::size_t i = 0; i < h; ++i) {
        // Values away from zero keep relative comparisons meaningful.
        ks.push_back(detail::random_matrix(eng, n, d, 4.0f, 12.0f));
        vs.push_back(detail::random_matrix(eng, n, d, 4.0f, 12.0f));
    }
    DenseMatrix q = detail::random_matrix(eng, h, d, -0.5f, 0.5f);
    HybridKVCache cache =
        HybridKVCache::build(ks, vs, QuantizationConfig{8, QuantMode::channel_wise, 8}, {});
    DenseMatrix out = cache.decode_step(q, KernelConfig{4, 32, 2});
    for (std::size_t i = 0; i < h; ++i) {
        std::vector<float> want = oracle_attention(q.row_span(i), ks[i], vs[i]);
        for (std::size_t c = 0; c < d; ++c) {
            if (!detail::rel_close(out.at(i, c), want[c], 1e-3f)) {
                r.passed = false;
                r.detail = "8-bit decode diverges from dense attention oracle";
                return r;
            }
        }
    }
    return r;
}

inline SelftestResult selftest_memory_law() {
    SelftestResult r{"memory_accounting", true, ""};
    std::mt19937_64 eng(46);
    const std::size_t n = 1024, d = 64, h = 1;
    const int b = 1;
    std::vector<DenseMatrix> ks{detail::random_matrix(eng, n, d, -1.0f, 1.0f)};
    std::vector<DenseMatrix> vs{detail::random_matrix(eng, n, d, -1.0f, 1.0f)};
    HybridKVCache cache =
        HybridKVCache::build(ks, vs, QuantizationConfig{b, QuantMode::channel_wise, 8}, {});
    CacheMemory m = cache.memory();
    std::size_t want_codes = h * 2 * ((n * d * static_cast<std::size_t>(b) + 7) / 8);
    std::size_t want_stats = h * 2 * 2 * d * 4;
    if (m.code_bytes != want_codes || m.stats_bytes != want_stats ||
        m.quantized_bytes != 17408) {
        r.passed = false;
        r.detail = "accounting mismatch: got " + std::to_string(m.quantized_bytes) +
                   " quantized bytes";
    }
    return r;
}

inline SelftestResult selftest_oracle_agreement() {
    SelftestResult r{"oracle_agreement", true, ""};
    std::mt19937_64 eng(47);
    DenseMatrix k = detail::random_matrix(eng, 40, 12, -2.0f, 3.0f);
    QuantizedSegment seg = quantize(k, compute_stats(k, QuantMode::channel_wise), 2);
    DenseMatrix fast = dequantize(seg);
    DenseMatrix slow = oracle_segment_dequantize(seg);
    for (std::size_t i = 0; i < fast.data.size(); ++i) {
        if (std::abs(fast.data[i] - slow.data[i]) > 1e-6f) {
            r.passed = false;
            r.detail = "dequantize disagrees with scalar oracle";
            return r;
        }
    }
    std::vector<CalibrationSample> set;
    for (int i = 0; i < 3; ++i) {
        CalibrationSample s;
        DenseMatrix keys = detail::random_matrix(eng, 32, 8, -4.0f, 4.0f);
        DenseMatrix q = detail::random_matrix(eng, 1, 8, -1.0f, 1.0f);
        s.query.assign(q.data.begin(), q.data.end());
        s.keys_quant = quantize(keys, compute_stats(keys, QuantMode::channel_wise), 1);
        s.keys_exact = std::move(keys);
        set.push_back(std::move(s));
    }
    std::vector<CalibrationParams> cells = default_grid();
    CalibrationParams fast_pick = grid_search(set, cells);
    CalibrationParams slow_pick = oracle_grid_argmin(oracle_grid_mse(set, cells));
    if (fast_pick != slow_pick) {
        r.passed = false;
        r.detail = "grid_search argmin disagrees with exhaustive oracle";
    }
    return r;
}

inline std::vector<SelftestResult> run_selftests(const SelftestOptions& opt = {}) {
    return {
        selftest_packing(opt),        selftest_quantization_bound(),
        selftest_post_scale_qk(),     selftest_post_scale_wv(),
        selftest_calibration(),       selftest_hybrid_decode(),
        selftest_memory_law(),        selftest_oracle_agreement(),
    };
}

}  // namespace kvq
