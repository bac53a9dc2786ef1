#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "kvq/calibrate.hpp"
#include "kvq/errors.hpp"
#include "kvq/kernels.hpp"
#include "kvq/matrix.hpp"
#include "kvq/quantize.hpp"
#include "kvq/tensor_io.hpp"

// Hybrid per-head KV cache: a frozen quantized prefill segment plus a
// full-precision append-only tail for generated tokens. Decode stitches the
// two: fused kernels score the packed segment, a dense product scores the
// tail, g calibrates only the segment scores, one joint softmax mixes both.

namespace kvq {

// Bitwidth 16 marks the full-precision baseline: the whole cache lives in
// the tail and the fused path is never taken.
inline constexpr int kFullPrecisionBits = 16;

struct CacheMemory {
    std::size_t code_bytes = 0;      // packed key+value payload, incl. word padding
    std::size_t stats_bytes = 0;     // alpha/beta vectors, 4 bytes per entry
    std::size_t quantized_bytes = 0; // code_bytes + stats_bytes
    std::size_t tail_bytes = 0;      // full-precision tail key+value payload
    std::size_t fp32_vis_bytes = 0;  // what the prefill would cost unquantized
    std::size_t total_bytes = 0;     // quantized_bytes + tail_bytes
};

struct DecodeDetail {
    DenseMatrix outputs;  // heads x dim
    DenseMatrix weights;  // heads x (n_vis + n_txt) probability rows
    std::size_t slope_violations = 0;
};

class HybridKVCache {
public:
    // Quantizes the prefill per head, channel-wise over both keys and values;
    // tails start empty. Zero-row prefill matrices (cols still = d) yield a
    // pure full-precision cache that will behave exactly like dense attention.
    static HybridKVCache build(std::span<const DenseMatrix> k_vis,
                               std::span<const DenseMatrix> v_vis,
                               const QuantizationConfig& cfg,
                               const CalibrationParams& cal) {
        cfg.validate();
        check_prefill(k_vis, v_vis);
        HybridKVCache cache;
        cache.heads_ = k_vis.size();
        cache.dim_ = k_vis[0].cols;
        cache.bitwidth_ = cfg.bitwidth;
        cache.calibration_ = cal;
        for (std::size_t h = 0; h < cache.heads_; ++h) {
            cache.k_seg_.push_back(quantize_or_empty(k_vis[h], cfg));
            cache.v_seg_.push_back(quantize_or_empty(v_vis[h], cfg));
            cache.k_tail_.emplace_back(0, cache.dim_);
            cache.v_tail_.emplace_back(0, cache.dim_);
        }
        return cache;
    }

    // Baseline: the prefill goes straight into the tail, nothing is packed.
    static HybridKVCache build_full_precision(std::span<const DenseMatrix> k_prefill,
                                              std::span<const DenseMatrix> v_prefill) {
        check_prefill(k_prefill, v_prefill);
        HybridKVCache cache;
        cache.heads_ = k_prefill.size();
        cache.dim_ = k_prefill[0].cols;
        cache.bitwidth_ = kFullPrecisionBits;
        for (std::size_t h = 0; h < cache.heads_; ++h) {
            cache.k_seg_.push_back(empty_segment(cache.dim_));
            cache.v_seg_.push_back(empty_segment(cache.dim_));
            cache.k_tail_.push_back(k_prefill[h]);
            cache.v_tail_.push_back(v_prefill[h]);
        }
        return cache;
    }

    std::size_t heads() const { return heads_; }
    std::size_t dim() const { return dim_; }
    int bitwidth() const { return bitwidth_; }
    const CalibrationParams& calibration() const { return calibration_; }
    std::size_t vis_tokens() const { return heads_ == 0 ? 0 : k_seg_[0].tokens; }
    std::size_t tail_tokens() const { return heads_ == 0 ? 0 : k_tail_[0].rows; }
    std::size_t total_tokens() const { return vis_tokens() + tail_tokens(); }

    const QuantizedSegment& key_segment(std::size_t h) const { return k_seg_[h]; }
    const QuantizedSegment& value_segment(std::size_t h) const { return v_seg_[h]; }
    const DenseMatrix& key_tail(std::size_t h) const { return k_tail_[h]; }
    const DenseMatrix& value_tail(std::size_t h) const { return v_tail_[h]; }

    // One generated token per head; the quantized segment never changes.
    void append(const DenseMatrix& k_new, const DenseMatrix& v_new) {
        if (k_new.rows != heads_ || v_new.rows != heads_ || k_new.cols != dim_ ||
            v_new.cols != dim_) {
            throw domain_error("append: expected " + std::to_string(heads_) + " x " +
                               std::to_string(dim_) + " new key/value rows");
        }
        for (std::size_t h = 0; h < heads_; ++h) {
            k_tail_[h].append_row(k_new.row_span(h));
            v_tail_[h].append_row(v_new.row_span(h));
        }
    }

    DenseMatrix decode_step(const DenseMatrix& queries, const KernelConfig& cfg = {}) const {
        return run_decode(queries, cfg, nullptr, nullptr);
    }

    DecodeDetail decode_step_detailed(const DenseMatrix& queries,
                                      const KernelConfig& cfg = {}) const {
        DecodeDetail detail;
        detail.weights = DenseMatrix(heads_, total_tokens());
        detail.outputs = run_decode(queries, cfg, &detail.weights, &detail.slope_violations);
        return detail;
    }

    CacheMemory memory() const {
        CacheMemory m;
        for (std::size_t h = 0; h < heads_; ++h) {
            m.code_bytes += k_seg_[h].codes.byte_size() + v_seg_[h].codes.byte_size();
            m.stats_bytes += 4 * (k_seg_[h].stats.alpha.size() + k_seg_[h].stats.beta.size() +
                                  v_seg_[h].stats.alpha.size() + v_seg_[h].stats.beta.size());
            m.tail_bytes += 4 * (k_tail_[h].data.size() + v_tail_[h].data.size());
        }
        m.quantized_bytes = m.code_bytes + m.stats_bytes;
        m.fp32_vis_bytes = heads_ * 2 * vis_tokens() * dim_ * 4;
        m.total_bytes = m.quantized_bytes + m.tail_bytes;
        return m;
    }

    void save(std::ostream& os) const {
        os.write(kCacheMagic, 4);
        detail::put_u32(os, kCacheVersion);
        detail::put_u64(os, heads_);
        detail::put_u64(os, dim_);
        detail::put_u32(os, static_cast<std::uint32_t>(bitwidth_));
        detail::put_u64(os, vis_tokens());
        detail::put_u64(os, tail_tokens());
        detail::put_f32(os, calibration_.tau1);
        detail::put_f32(os, calibration_.tau2);
        for (std::size_t h = 0; h < heads_; ++h) {
            write_segment(os, k_seg_[h]);
            write_segment(os, v_seg_[h]);
            write_tensor(os, k_tail_[h]);
            write_tensor(os, v_tail_[h]);
        }
    }

    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw format_error("cannot open for writing: " + path, 0);
        save(os);
        if (!os) throw format_error("write failed: " + path, 0);
    }

    static HybridKVCache load(std::istream& is, std::uint64_t& off) {
        detail::check_magic(is, off, kCacheMagic, "cache");
        std::uint32_t version = detail::get_u32(is, off, "version");
        if (version != kCacheVersion) {
            throw format_error("unsupported cache version " + std::to_string(version),
                               off - 4);
        }
        HybridKVCache cache;
        cache.heads_ = static_cast<std::size_t>(detail::get_u64(is, off, "heads"));
        cache.dim_ = static_cast<std::size_t>(detail::get_u64(is, off, "dim"));
        cache.bitwidth_ = static_cast<int>(detail::get_u32(is, off, "bitwidth"));
        std::uint64_t n_vis = detail::get_u64(is, off, "vis tokens");
        std::uint64_t n_txt = detail::get_u64(is, off, "tail tokens");
        cache.calibration_.tau1 = detail::get_f32(is, off, "tau1");
        cache.calibration_.tau2 = detail::get_f32(is, off, "tau2");
        if (cache.bitwidth_ != kFullPrecisionBits && cache.bitwidth_ != 1 &&
            cache.bitwidth_ != 2 && cache.bitwidth_ != 4 && cache.bitwidth_ != 8) {
            throw format_error("invalid cache bitwidth " + std::to_string(cache.bitwidth_),
                               off);
        }
        for (std::size_t h = 0; h < cache.heads_; ++h) {
            cache.k_seg_.push_back(read_segment(is, off));
            cache.v_seg_.push_back(read_segment(is, off));
            cache.k_tail_.push_back(read_tensor(is, off));
            cache.v_tail_.push_back(read_tensor(is, off));
            const char* bad = nullptr;
            if (cache.k_seg_[h].dim != cache.dim_ || cache.v_seg_[h].dim != cache.dim_) {
                bad = "segment dim";
            } else if (cache.k_seg_[h].tokens != n_vis || cache.v_seg_[h].tokens != n_vis) {
                bad = "segment token count";
            } else if (cache.k_tail_[h].cols != cache.dim_ ||
                       cache.v_tail_[h].cols != cache.dim_) {
                bad = "tail cols";
            } else if (cache.k_tail_[h].rows != n_txt || cache.v_tail_[h].rows != n_txt) {
                bad = "tail token count";
            } else if (n_vis > 0 && (cache.k_seg_[h].bitwidth != cache.bitwidth_ ||
                                     cache.v_seg_[h].bitwidth != cache.bitwidth_)) {
                bad = "segment bitwidth";
            }
            if (bad) {
                throw format_error("cache head " + std::to_string(h) +
                                       " does not match manifest: " + std::string(bad),
                                   off);
            }
        }
        return cache;
    }

    static HybridKVCache load(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw format_error("cannot open for reading: " + path, 0);
        std::uint64_t off = 0;
        HybridKVCache cache = load(is, off);
        is.peek();
        if (!is.eof()) throw format_error("trailing bytes after cache data", off);
        return cache;
    }

private:
    static inline constexpr char kCacheMagic[4] = {'K', 'V', 'Q', 'C'};
    static inline constexpr std::uint32_t kCacheVersion = 1;

    static void check_prefill(std::span<const DenseMatrix> k, std::span<const DenseMatrix> v) {
        if (k.empty() || k.size() != v.size()) {
            throw domain_error("cache build: need matching per-head key/value lists");
        }
        for (std::size_t h = 0; h < k.size(); ++h) {
            if (k[h].rows != k[0].rows || k[h].cols != k[0].cols ||
                v[h].rows != k[0].rows || v[h].cols != k[0].cols) {
                throw domain_error("cache build: head " + std::to_string(h) +
                                   " shape differs from head 0");
            }
        }
        if (k[0].cols == 0) throw domain_error("cache build: head dim must be positive");
    }

    static QuantizedSegment empty_segment(std::size_t dim) {
        QuantizedSegment seg;
        seg.codes = pack({}, 8, 8);
        seg.stats.alpha.assign(dim, 0.0f);
        seg.stats.beta.assign(dim, 0.0f);
        seg.tokens = 0;
        seg.dim = dim;
        seg.bitwidth = 8;
        return seg;
    }

    static QuantizedSegment quantize_or_empty(const DenseMatrix& m,
                                              const QuantizationConfig& cfg) {
        if (m.rows == 0) {
            QuantizedSegment seg = empty_segment(m.cols);
            seg.codes.code_bits = cfg.bitwidth;
            seg.codes.word_bits = cfg.word_bits;
            seg.bitwidth = cfg.bitwidth;
            return seg;
        }
        return quantize(m, compute_stats(m, cfg.mode), cfg.bitwidth, cfg.word_bits);
    }

    // Workers split whole heads; each head's scores and output are produced
    // by exactly one worker in a fixed order, so results do not depend on P.
    DenseMatrix run_decode(const DenseMatrix& queries, const KernelConfig& cfg,
                           DenseMatrix* weights_out, std::size_t* violations_out) const {
        cfg.validate();
        if (queries.rows != heads_ || queries.cols != dim_) {
            throw domain_error("decode_step: expected " + std::to_string(heads_) + " x " +
                               std::to_string(dim_) + " queries");
        }
        DenseMatrix out(heads_, dim_);
        std::vector<std::size_t> violations(heads_, 0);
        const KernelConfig inner{cfg.head_block, cfg.token_block, 1};
        const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(dim_));
        detail::parallel_workers(cfg.workers, heads_, [&](int, std::size_t s, std::size_t t) {
            std::vector<float> qs;
            std::vector<float> qtab;
            std::vector<float> vis;
            for (std::size_t h = s; h < t; ++h) {
                const QuantizedSegment& kseg = k_seg_[h];
                vis.assign(kseg.tokens, 0.0f);
                if (kseg.tokens > 0) {
                    detail::qk_head(queries.row_span(h), kseg, inner.token_block, qs, qtab,
                                    vis.data());
                    for (float& v : vis) v *= inv_sqrt_d;
                }
                std::vector<float> tail = naive_qk(queries.row_span(h), k_tail_[h]);
                for (float& v : tail) v *= inv_sqrt_d;
                std::vector<float> row =
                    calibrated_softmax_concat(vis, tail, calibration_, &violations[h]);
                if (weights_out) {
                    for (std::size_t j = 0; j < row.size(); ++j) {
                        weights_out->at(h, j) = row[j];
                    }
                }
                std::span<const float> w(row);
                float* dst = out.row(h);
                if (kseg.tokens > 0) {
                    std::vector<float> vis_out =
                        wv_output(w.subspan(0, kseg.tokens), v_seg_[h], inner);
                    for (std::size_t c = 0; c < dim_; ++c) dst[c] = vis_out[c];
                }
                std::vector<float> tail_out =
                    naive_wv(w.subspan(kseg.tokens), v_tail_[h]);
                for (std::size_t c = 0; c < dim_; ++c) dst[c] += tail_out[c];
            }
        });
        if (violations_out) {
            for (std::size_t v : violations) *violations_out += v;
        }
        return out;
    }

    std::size_t heads_ = 0;
    std::size_t dim_ = 0;
    int bitwidth_ = 8;
    CalibrationParams calibration_;
    std::vector<QuantizedSegment> k_seg_, v_seg_;
    std::vector<DenseMatrix> k_tail_, v_tail_;
};

}  // namespace kvq
