#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kvq/bitpack.hpp"
#include "kvq/calibrate.hpp"
#include "kvq/errors.hpp"
#include "kvq/matrix.hpp"
#include "kvq/quantize.hpp"

// Brute-force oracles. Each optimized operation elsewhere has exactly one
// counterpart here, deliberately written with different loop orders, double
// precision, and no packing shortcuts, so a shared bug cannot hide. Speed is
// a non-goal.

namespace kvq {

// softmax(q K^T / sqrt(d)) V, all in double. Scores accumulate with the
// channel loop outermost (transposed relative to the production path); the
// output accumulates with the channel loop outermost as well.
inline std::vector<float> oracle_attention(std::span<const float> q, const DenseMatrix& k,
                                           const DenseMatrix& v) {
    if (q.size() != k.cols || k.rows != v.rows) {
        throw domain_error("oracle_attention: shape mismatch");
    }
    const std::size_t n = k.rows;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(k.cols));
    std::vector<double> scores(n, 0.0);
    for (std::size_t c = 0; c < k.cols; ++c) {
        double qc = q[c];
        for (std::size_t j = 0; j < n; ++j) scores[j] += qc * static_cast<double>(k.at(j, c));
    }
    double m = scores.empty() ? 0.0 : scores[0];
    for (double s : scores) m = std::max(m, s);
    double sum = 0.0;
    for (double& s : scores) {
        s = std::exp(s * inv_sqrt_d - m * inv_sqrt_d);
        sum += s;
    }
    std::vector<float> out(v.cols, 0.0f);
    for (std::size_t c = 0; c < v.cols; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            acc += (scores[j] / sum) * static_cast<double>(v.at(j, c));
        }
        out[c] = static_cast<float>(acc);
    }
    return out;
}

// Packing re-derived through literal bit strings: each code becomes N
// characters of '0'/'1' (most significant first), the strings concatenate,
// and every M-character slice parses back into one word. Zero padding on the
// right models the zero pad codes of the production packer.
inline std::vector<std::uint32_t> oracle_pack(std::span<const std::uint32_t> codes,
                                              int code_bits, int word_bits) {
    detail::validate_widths(code_bits, word_bits);
    const std::uint32_t limit = (code_bits >= 32) ? 0xffffffffu : ((1u << code_bits) - 1u);
    std::string bits;
    for (std::uint32_t c : codes) {
        if (c > limit) {
            throw domain_error("oracle_pack: code " + std::to_string(c) +
                               " does not fit in " + std::to_string(code_bits) + " bits");
        }
        for (int i = code_bits - 1; i >= 0; --i) bits.push_back((c >> i) & 1u ? '1' : '0');
    }
    while (bits.size() % static_cast<std::size_t>(word_bits) != 0) bits.push_back('0');
    std::vector<std::uint32_t> words;
    for (std::size_t at = 0; at < bits.size(); at += static_cast<std::size_t>(word_bits)) {
        std::uint32_t w = 0;
        for (int i = 0; i < word_bits; ++i) {
            w = (w << 1) | (bits[at + static_cast<std::size_t>(i)] == '1' ? 1u : 0u);
        }
        words.push_back(w);
    }
    return words;
}

inline std::vector<std::uint32_t> oracle_unpack(std::span<const std::uint32_t> words,
                                                int code_bits, int word_bits,
                                                std::size_t count) {
    detail::validate_widths(code_bits, word_bits);
    std::string bits;
    for (std::uint32_t w : words) {
        for (int i = word_bits - 1; i >= 0; --i) bits.push_back((w >> i) & 1u ? '1' : '0');
    }
    if (count * static_cast<std::size_t>(code_bits) > bits.size()) {
        throw domain_error("oracle_unpack: not enough words for requested count");
    }
    std::vector<std::uint32_t> codes(count, 0u);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t c = 0;
        for (int b = 0; b < code_bits; ++b) {
            c = (c << 1) |
                (bits[i * static_cast<std::size_t>(code_bits) + static_cast<std::size_t>(b)] ==
                         '1'
                     ? 1u
                     : 0u);
        }
        codes[i] = c;
    }
    return codes;
}

// Scalar quantizer in double, no vectorized stats reuse.
inline std::uint32_t oracle_quantize(double x, double alpha, double beta, int bitwidth) {
    double levels = static_cast<double>((1u << bitwidth) - 1u);
    if (beta <= alpha) return 0;
    double t = std::round((x - alpha) * levels / (beta - alpha));
    t = std::clamp(t, 0.0, levels);
    return static_cast<std::uint32_t>(t);
}

inline double oracle_dequantize(std::uint32_t code, double alpha, double beta, int bitwidth) {
    double levels = static_cast<double>((1u << bitwidth) - 1u);
    if (beta <= alpha) return alpha;
    return static_cast<double>(code) * (beta - alpha) / levels + alpha;
}

// Dequantizes a segment element by element through the scalar path above,
// pulling codes out with the string unpacker. Cross-checks production
// dequantize.
inline DenseMatrix oracle_segment_dequantize(const QuantizedSegment& seg) {
    std::vector<std::uint32_t> words(seg.codes.word_count());
    for (std::size_t i = 0; i < words.size(); ++i) words[i] = seg.codes.word_at(i);
    std::vector<std::uint32_t> codes =
        oracle_unpack(words, seg.codes.code_bits, seg.codes.word_bits,
                      seg.codes.logical_count);
    DenseMatrix m(seg.tokens, seg.dim);
    const std::size_t stride = seg.codes_per_row();
    for (std::size_t r = 0; r < seg.tokens; ++r) {
        for (std::size_t c = 0; c < seg.dim; ++c) {
            m.at(r, c) = static_cast<float>(
                oracle_dequantize(codes[r * stride + c], seg.stats.alpha[c],
                                  seg.stats.beta[c], seg.bitwidth));
        }
    }
    return m;
}

// Exhaustive grid evaluation, recomputed from scratch per cell: dequantize
// the keys through the scalar path, dense-multiply in double, apply g by its
// direct definitional formula, softmax in double. No caching across cells.
inline std::vector<GridCell> oracle_grid_mse(std::span<const CalibrationSample> set,
                                             std::span<const CalibrationParams> cells) {
    if (set.empty()) throw domain_error("oracle_grid_mse: empty calibration set");
    if (cells.empty()) throw domain_error("oracle_grid_mse: empty grid");
    std::vector<GridCell> table;
    for (const CalibrationParams& p : cells) {
        double total = 0.0;
        for (const CalibrationSample& s : set) {
            const std::size_t n = s.keys_exact.rows;
            const double inv_sqrt_d =
                1.0 / std::sqrt(static_cast<double>(s.keys_exact.cols));
            DenseMatrix deq = oracle_segment_dequantize(s.keys_quant);
            std::vector<double> quant(n, 0.0), exact(n, 0.0);
            for (std::size_t j = 0; j < n; ++j) {
                for (std::size_t c = 0; c < s.keys_exact.cols; ++c) {
                    quant[j] += static_cast<double>(s.query[c]) *
                                static_cast<double>(deq.at(j, c));
                    exact[j] += static_cast<double>(s.query[c]) *
                                static_cast<double>(s.keys_exact.at(j, c));
                }
                quant[j] *= inv_sqrt_d;
                exact[j] *= inv_sqrt_d;
            }
            double gamma = quant[0], delta = quant[0];
            for (double v : quant) {
                gamma = std::min(gamma, v);
                delta = std::max(delta, v);
            }
            for (double& v : quant) {
                if (delta > gamma) {
                    v = (delta - gamma + p.tau1 - p.tau2) / (delta - gamma) * (v - gamma) +
                        gamma - p.tau1;
                } else {
                    v -= p.tau1;
                }
            }
            auto softmax = [](std::vector<double>& row) {
                double m = row[0];
                for (double v : row) m = std::max(m, v);
                double sum = 0.0;
                for (double& v : row) {
                    v = std::exp(v - m);
                    sum += v;
                }
                for (double& v : row) v /= sum;
            };
            softmax(quant);
            softmax(exact);
            double mse = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                mse += (quant[j] - exact[j]) * (quant[j] - exact[j]);
            }
            total += mse / static_cast<double>(n);
        }
        table.push_back({p, total / static_cast<double>(set.size())});
    }
    return table;
}

// Argmin with the same tie-break contract as the production search: smaller
// tau1 wins ties, then smaller tau2.
inline CalibrationParams oracle_grid_argmin(std::span<const GridCell> table) {
    if (table.empty()) throw domain_error("oracle_grid_argmin: empty table");
    std::size_t best = 0;
    for (std::size_t i = 1; i < table.size(); ++i) {
        const GridCell& a = table[i];
        const GridCell& b = table[best];
        bool better = a.mse < b.mse ||
                      (a.mse == b.mse && (a.params.tau1 < b.params.tau1 ||
                                          (a.params.tau1 == b.params.tau1 &&
                                           a.params.tau2 < b.params.tau2)));
        if (better) best = i;
    }
    return table[best].params;
}

}  // namespace kvq
