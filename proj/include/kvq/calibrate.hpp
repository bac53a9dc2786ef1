#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "kvq/errors.hpp"
#include "kvq/kernels.hpp"
#include "kvq/matrix.hpp"
#include "kvq/quantize.hpp"
#include "kvq/workload.hpp"

// Score calibration: the affine remap g taking a score row's range [gamma,
// delta] to [gamma - tau1, delta - tau2] before softmax, damping the outlier
// overweight that low-bit quantization introduces, plus the (tau1, tau2) grid
// search that picks one global pair.

namespace kvq {

struct CalibrationParams {
    float tau1 = 0.0f;
    float tau2 = 0.0f;

    bool identity() const { return tau1 == 0.0f && tau2 == 0.0f; }
    bool operator==(const CalibrationParams&) const = default;
};

struct ScoreRange {
    float gamma = 0.0f;  // row minimum
    float delta = 0.0f;  // row maximum
};

inline ScoreRange row_range(std::span<const float> row) {
    if (row.empty()) throw domain_error("row_range: empty row");
    ScoreRange r{row[0], row[0]};
    for (float v : row) {
        r.gamma = std::min(r.gamma, v);
        r.delta = std::max(r.delta, v);
    }
    return r;
}

// g keeps monotone order iff its slope (delta - gamma + tau1 - tau2) is
// positive; a violation is possible for extreme tau on a tiny range and is
// surfaced as a diagnostic by callers, not an error.
inline bool g_monotone(const ScoreRange& r, const CalibrationParams& p) {
    return (r.delta - r.gamma) + (p.tau1 - p.tau2) > 0.0f;
}

// g(x) = (delta-gamma+tau1-tau2)/(delta-gamma) * (x-gamma) + gamma - tau1,
// rewritten as x - (tau1*(1-t) + tau2*t) with t = (x-gamma)/(delta-gamma):
// t is exactly 0 at gamma and exactly 1 at delta, so the endpoints land on
// gamma - tau1 and delta - tau2 with a single rounding each. A collapsed
// range (delta == gamma) degrades to the shift x - tau1; softmax is
// shift-invariant, so the convention cannot change attention output.
inline float g_apply(float x, const ScoreRange& r, const CalibrationParams& p) {
    float width = r.delta - r.gamma;
    if (width <= 0.0f) return x - p.tau1;
    float t = (x - r.gamma) / width;
    return x - (p.tau1 * (1.0f - t) + p.tau2 * t);
}

inline std::vector<float> g_transform(std::span<const float> scores, const ScoreRange& r,
                                      const CalibrationParams& p) {
    std::vector<float> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) out[i] = g_apply(scores[i], r, p);
    return out;
}

// Max-subtracted softmax over the given row, in place.
inline void softmax_inplace(std::span<float> row) {
    if (row.empty()) return;
    float m = row[0];
    for (float v : row) m = std::max(m, v);
    float sum = 0.0f;
    for (float& v : row) {
        v = std::exp(v - m);
        sum += v;
    }
    for (float& v : row) v /= sum;
}

inline std::vector<float> softmax_row(std::span<const float> row) {
    std::vector<float> out(row.begin(), row.end());
    softmax_inplace(out);
    return out;
}

// One probability row over [quantized-segment scores | exact tail scores].
// g sees only the quantized part, with (gamma, delta) taken from that part
// itself; the tail passes through untouched and a single softmax runs over
// the concatenation. Returns the count of g slope violations via the
// optional diagnostic counter.
inline std::vector<float> calibrated_softmax_concat(std::span<const float> vis,
                                                    std::span<const float> tail,
                                                    const CalibrationParams& p,
                                                    std::size_t* slope_violations = nullptr) {
    std::vector<float> row;
    row.reserve(vis.size() + tail.size());
    if (!vis.empty()) {
        ScoreRange r = row_range(vis);
        if (slope_violations && !g_monotone(r, p)) ++*slope_violations;
        for (float v : vis) row.push_back(g_apply(v, r, p));
    }
    row.insert(row.end(), tail.begin(), tail.end());
    softmax_inplace(row);
    return row;
}

// All-quantized form: softmax(g(q K^T / sqrt(d))) over one packed segment.
inline std::vector<float> calibrated_scores(std::span<const float> q,
                                            const QuantizedSegment& keys,
                                            const CalibrationParams& p,
                                            const KernelConfig& cfg = {}) {
    std::vector<float> scores = qk_scores(q, keys, cfg);
    float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(keys.dim));
    for (float& v : scores) v *= inv_sqrt_d;
    return calibrated_softmax_concat(scores, {}, p);
}

struct CalibrationSample {
    std::vector<float> query;
    DenseMatrix keys_exact;       // n x d full-precision keys
    QuantizedSegment keys_quant;  // same tokens, packed
};

inline std::vector<CalibrationParams> make_grid(std::vector<float> values) {
    if (values.empty()) throw domain_error("make_grid: empty value list");
    std::sort(values.begin(), values.end());
    std::vector<CalibrationParams> cells;
    cells.reserve(values.size() * values.size());
    for (float t1 : values) {
        for (float t2 : values) cells.push_back({t1, t2});
    }
    return cells;
}

inline std::vector<CalibrationParams> default_grid() {
    return make_grid({0.0f, 1.0f, 2.0f, 3.0f});
}

struct GridCell {
    CalibrationParams params;
    double mse = 0.0;
};

namespace detail {

struct PreparedSample {
    std::vector<float> quant_scaled;  // q K_dis scores, post-scaled, / sqrt(d)
    std::vector<float> exact_prob;    // softmax(q K_exact^T / sqrt(d))
};

inline std::vector<PreparedSample> prepare_samples(std::span<const CalibrationSample> set,
                                                   const KernelConfig& cfg) {
    std::vector<PreparedSample> out(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        const CalibrationSample& s = set[i];
        if (s.query.size() != s.keys_exact.cols || s.query.size() != s.keys_quant.dim ||
            s.keys_exact.rows != s.keys_quant.tokens) {
            throw domain_error("calibration sample " + std::to_string(i) +
                               " has inconsistent shapes");
        }
        float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(s.query.size()));
        out[i].quant_scaled = qk_scores(s.query, s.keys_quant, cfg);
        for (float& v : out[i].quant_scaled) v *= inv_sqrt_d;
        out[i].exact_prob = naive_qk(s.query, s.keys_exact);
        for (float& v : out[i].exact_prob) v *= inv_sqrt_d;
        softmax_inplace(out[i].exact_prob);
    }
    return out;
}

inline double sample_mse(const PreparedSample& s, const CalibrationParams& p) {
    std::vector<float> prob = calibrated_softmax_concat(s.quant_scaled, {}, p);
    double acc = 0.0;
    for (std::size_t i = 0; i < prob.size(); ++i) {
        double diff = static_cast<double>(prob[i]) - static_cast<double>(s.exact_prob[i]);
        acc += diff * diff;
    }
    return acc / static_cast<double>(prob.size());
}

}  // namespace detail

// Mean softmax MSE against the exact rows, one cell per candidate pair.
// Score rows are prepared once and shared read-only; cells evaluate
// independently across workers.
inline std::vector<GridCell> grid_mse_table(std::span<const CalibrationSample> set,
                                            std::span<const CalibrationParams> cells,
                                            const KernelConfig& cfg = {}) {
    if (set.empty()) throw domain_error("grid_mse_table: empty calibration set");
    if (cells.empty()) throw domain_error("grid_mse_table: empty grid");
    std::vector<detail::PreparedSample> prepared = detail::prepare_samples(set, cfg);
    std::vector<GridCell> table(cells.size());
    detail::parallel_workers(cfg.workers, cells.size(), [&](int, std::size_t s, std::size_t t) {
        for (std::size_t c = s; c < t; ++c) {
            double acc = 0.0;
            for (const auto& sample : prepared) acc += detail::sample_mse(sample, cells[c]);
            table[c] = {cells[c], acc / static_cast<double>(prepared.size())};
        }
    });
    return table;
}

// Argmin over the table; ties go to the smaller tau1, then smaller tau2.
inline CalibrationParams grid_search(std::span<const CalibrationSample> set,
                                     std::span<const CalibrationParams> cells,
                                     const KernelConfig& cfg = {}) {
    std::vector<GridCell> table = grid_mse_table(set, cells, cfg);
    std::size_t best = 0;
    for (std::size_t i = 1; i < table.size(); ++i) {
        const auto& a = table[i];
        const auto& b = table[best];
        bool better = a.mse < b.mse ||
                      (a.mse == b.mse && (a.params.tau1 < b.params.tau1 ||
                                          (a.params.tau1 == b.params.tau1 &&
                                           a.params.tau2 < b.params.tau2)));
        if (better) best = i;
    }
    return table[best].params;
}

inline CalibrationParams grid_search(std::span<const CalibrationSample> set,
                                     const KernelConfig& cfg = {}) {
    std::vector<CalibrationParams> cells = default_grid();
    return grid_search(set, cells, cfg);
}

// Diagnostics mirroring the two error studies: per-head softmax MSE for the
// uncalibrated (quant) and calibrated (quant_c) paths against the exact row,
// and shared-bin histograms of the pre-softmax entries for all three
// variants. Bin edges span the union of the three rows per head.

enum class ScoreVariant { exact = 0, quant = 1, quant_c = 2 };

inline const char* variant_name(ScoreVariant v) {
    switch (v) {
        case ScoreVariant::exact: return "exact";
        case ScoreVariant::quant: return "quant";
        default: return "quant_c";
    }
}

struct MseRow {
    std::size_t head = 0;
    double mse_quant = 0.0;
    double mse_quant_c = 0.0;
};

struct HeadHistogram {
    std::size_t head = 0;
    std::vector<float> edges;  // bins + 1 ascending edges, shared by variants
    std::array<std::vector<std::uint64_t>, 3> counts;  // indexed by ScoreVariant
};

struct MseReport {
    std::vector<MseRow> rows;
    std::vector<HeadHistogram> histograms;
    double mean_mse_quant = 0.0;
    double mean_mse_quant_c = 0.0;
};

namespace detail {

inline void bin_row(std::span<const float> row, const std::vector<float>& edges,
                    std::vector<std::uint64_t>& counts) {
    counts.assign(edges.size() - 1, 0);
    float lo = edges.front();
    float hi = edges.back();
    float width = hi - lo;
    std::size_t bins = counts.size();
    for (float v : row) {
        std::size_t idx = 0;
        if (width > 0.0f) {
            float t = (v - lo) / width * static_cast<float>(bins);
            idx = std::min(bins - 1, static_cast<std::size_t>(std::max(0.0f, t)));
        }
        ++counts[idx];
    }
}

inline double prob_mse(std::span<const float> a, std::span<const float> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += diff * diff;
    }
    return acc / static_cast<double>(a.size());
}

}  // namespace detail

inline MseReport mse_report(std::span<const HeadWorkload> heads,
                            const QuantizationConfig& qcfg, const CalibrationParams& p,
                            std::size_t bins = 40, const KernelConfig& kcfg = {}) {
    if (heads.empty()) throw domain_error("mse_report: no heads");
    if (bins < 1) throw config_error("mse_report: bins must be >= 1");
    qcfg.validate();
    MseReport report;
    for (std::size_t h = 0; h < heads.size(); ++h) {
        const HeadWorkload& hw = heads[h];
        float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(hw.keys.cols));
        ChannelStats stats = compute_stats(hw.keys, qcfg.mode);
        QuantizedSegment seg = quantize(hw.keys, stats, qcfg.bitwidth, qcfg.word_bits);

        std::vector<float> exact_pre = naive_qk(hw.query.row_span(0), hw.keys);
        for (float& v : exact_pre) v *= inv_sqrt_d;
        std::vector<float> quant_pre = qk_scores(hw.query.row_span(0), seg, kcfg);
        for (float& v : quant_pre) v *= inv_sqrt_d;
        std::vector<float> qc_pre = g_transform(quant_pre, row_range(quant_pre), p);

        HeadHistogram hist;
        hist.head = h;
        float lo = exact_pre[0], hi = exact_pre[0];
        for (const auto* row : {&exact_pre, &quant_pre, &qc_pre}) {
            for (float v : *row) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
        hist.edges.resize(bins + 1);
        for (std::size_t i = 0; i <= bins; ++i) {
            hist.edges[i] = lo + (hi - lo) * static_cast<float>(i) / static_cast<float>(bins);
        }
        detail::bin_row(exact_pre, hist.edges, hist.counts[0]);
        detail::bin_row(quant_pre, hist.edges, hist.counts[1]);
        detail::bin_row(qc_pre, hist.edges, hist.counts[2]);
        report.histograms.push_back(std::move(hist));

        std::vector<float> exact_prob = softmax_row(exact_pre);
        std::vector<float> quant_prob = softmax_row(quant_pre);
        std::vector<float> qc_prob = softmax_row(qc_pre);
        MseRow row;
        row.head = h;
        row.mse_quant = detail::prob_mse(quant_prob, exact_prob);
        row.mse_quant_c = detail::prob_mse(qc_prob, exact_prob);
        report.rows.push_back(row);
        report.mean_mse_quant += row.mse_quant;
        report.mean_mse_quant_c += row.mse_quant_c;
    }
    report.mean_mse_quant /= static_cast<double>(heads.size());
    report.mean_mse_quant_c /= static_cast<double>(heads.size());
    return report;
}

namespace detail {

inline std::string fmt_real(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

inline std::ofstream open_csv(const std::string& path) {
    std::ofstream os(path);
    if (!os) throw format_error("cannot open for writing: " + path, 0);
    return os;
}

}  // namespace detail

// columns: variant,head,mse (exact rows carry 0 by definition)
inline void write_mse_csv(const std::string& path, const MseReport& report) {
    std::ofstream os = detail::open_csv(path);
    os << "variant,head,mse\n";
    for (const MseRow& r : report.rows) os << "exact," << r.head << ",0\n";
    for (const MseRow& r : report.rows) {
        os << "quant," << r.head << "," << detail::fmt_real(r.mse_quant) << "\n";
    }
    for (const MseRow& r : report.rows) {
        os << "quant_c," << r.head << "," << detail::fmt_real(r.mse_quant_c) << "\n";
    }
    if (!os) throw format_error("write failed: " + path, 0);
}

// columns: variant,head,bin_left,bin_right,count
inline void write_histogram_csv(const std::string& path, const MseReport& report) {
    std::ofstream os = detail::open_csv(path);
    os << "variant,head,bin_left,bin_right,count\n";
    for (const HeadHistogram& h : report.histograms) {
        for (int v = 0; v < 3; ++v) {
            for (std::size_t b = 0; b + 1 < h.edges.size(); ++b) {
                os << variant_name(static_cast<ScoreVariant>(v)) << "," << h.head << ","
                   << detail::fmt_real(h.edges[b]) << "," << detail::fmt_real(h.edges[b + 1])
                   << "," << h.counts[static_cast<std::size_t>(v)][b] << "\n";
            }
        }
    }
    if (!os) throw format_error("write failed: " + path, 0);
}

}  // namespace kvq
