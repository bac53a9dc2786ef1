#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "kvq/errors.hpp"
#include "kvq/matrix.hpp"

// Synthetic workload generation. All sampling is pinned to a named algorithm
// (std::mt19937_64 driving a Marsaglia polar normal sampler) so that a given
// (spec, seed) reproduces bit-identical matrices on any platform with IEEE-754
// binary32/binary64 arithmetic and the same libm rounding.

namespace kvq {

enum class Distribution { gaussian, heavy_tailed, outlier_channels };

struct WorkloadSpec {
    std::size_t heads = 1;
    std::size_t tokens = 1;
    std::size_t head_dim = 1;
    Distribution dist = Distribution::gaussian;
    // gaussian
    double mean = 0.0;
    double stddev = 1.0;
    // heavy_tailed: Student-t degrees of freedom (integer, >= 1)
    int student_dof = 3;
    // outlier_channels
    double base_std = 1.0;
    double outlier_fraction = 0.0625;
    double outlier_scale = 10.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (heads < 1 || tokens < 1 || head_dim < 1) {
            throw config_error("workload dimensions must all be >= 1");
        }
        switch (dist) {
            case Distribution::gaussian:
                if (!(stddev >= 0.0) || !std::isfinite(mean) || !std::isfinite(stddev)) {
                    throw config_error("gaussian requires finite mean and stddev >= 0");
                }
                break;
            case Distribution::heavy_tailed:
                if (student_dof < 1) {
                    throw config_error("heavy_tailed requires student_dof >= 1");
                }
                break;
            case Distribution::outlier_channels:
                if (!(base_std >= 0.0) || outlier_fraction < 0.0 || outlier_fraction > 1.0 ||
                    !(outlier_scale > 0.0)) {
                    throw config_error(
                        "outlier_channels requires base_std >= 0, fraction in [0,1], scale > 0");
                }
                break;
        }
    }

    // Number of leading columns treated as outlier channels.
    std::size_t outlier_columns() const {
        return static_cast<std::size_t>(
            std::llround(outlier_fraction * static_cast<double>(head_dim)));
    }
};

struct HeadWorkload {
    DenseMatrix keys;    // tokens x head_dim
    DenseMatrix values;  // tokens x head_dim
    DenseMatrix query;   // 1 x head_dim
};

// Per-head rows for one decode step.
struct StepTokens {
    std::vector<DenseMatrix> query;  // 1 x d each
    std::vector<DenseMatrix> key;
    std::vector<DenseMatrix> value;
};

namespace detail {

// Marsaglia polar method; avoids trig so cross-libm drift is limited to
// sqrt/log. Consumes a deterministic number of engine draws per accepted pair.
class NormalSampler {
public:
    explicit NormalSampler(std::mt19937_64& eng) : eng_(eng) {}

    double next() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform01() - 1.0;
            v = 2.0 * uniform01() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        double factor = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * factor;
        have_spare_ = true;
        return u * factor;
    }

    // 53-bit uniform in [0, 1).
    double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

private:
    std::mt19937_64& eng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    // splitmix64 finalizer over seed ^ salt
    std::uint64_t z = seed ^ (salt * 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d49b6d1b3e9349ULL;
    return z ^ (z >> 31);
}

inline float sample_value(const WorkloadSpec& spec, NormalSampler& normal) {
    switch (spec.dist) {
        case Distribution::gaussian:
            return static_cast<float>(spec.mean + spec.stddev * normal.next());
        case Distribution::heavy_tailed: {
            double z = normal.next();
            double chi2 = 0.0;
            for (int i = 0; i < spec.student_dof; ++i) {
                double n = normal.next();
                chi2 += n * n;
            }
            if (chi2 == 0.0) return 0.0f;
            return static_cast<float>(z / std::sqrt(chi2 / spec.student_dof));
        }
        case Distribution::outlier_channels:
            return static_cast<float>(spec.base_std * normal.next());
    }
    return 0.0f;
}

// Column scale applied in outlier_channels mode; the first outlier_columns()
// channels carry the outliers.
inline float column_scale(const WorkloadSpec& spec, std::size_t col) {
    if (spec.dist == Distribution::outlier_channels && col < spec.outlier_columns()) {
        return static_cast<float>(spec.outlier_scale);
    }
    return 1.0f;
}

inline void fill_matrix(DenseMatrix& m, const WorkloadSpec& spec, NormalSampler& normal) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t c = 0; c < m.cols; ++c) {
            m.at(r, c) = sample_value(spec, normal) * column_scale(spec, c);
        }
    }
}

}  // namespace detail

// Prefill workload: per head (K, V, q). Head h draws from an engine seeded
// with mix_seed(seed, h), so heads are independent and order-insensitive.
inline std::vector<HeadWorkload> generate(const WorkloadSpec& spec) {
    spec.validate();
    std::vector<HeadWorkload> out(spec.heads);
    for (std::size_t h = 0; h < spec.heads; ++h) {
        std::mt19937_64 eng(detail::mix_seed(spec.seed, h));
        detail::NormalSampler normal(eng);
        HeadWorkload& w = out[h];
        w.keys = DenseMatrix(spec.tokens, spec.head_dim);
        w.values = DenseMatrix(spec.tokens, spec.head_dim);
        w.query = DenseMatrix(1, spec.head_dim);
        detail::fill_matrix(w.keys, spec, normal);
        detail::fill_matrix(w.values, spec, normal);
        detail::fill_matrix(w.query, spec, normal);
    }
    return out;
}

// Deterministic per-step tokens for decode: step t is seeded independently of
// the prefill stream, so any prefix of steps reproduces identically.
inline StepTokens generate_step(const WorkloadSpec& spec, std::uint64_t step) {
    spec.validate();
    StepTokens out;
    out.query.resize(spec.heads);
    out.key.resize(spec.heads);
    out.value.resize(spec.heads);
    for (std::size_t h = 0; h < spec.heads; ++h) {
        std::mt19937_64 eng(
            detail::mix_seed(spec.seed, 0x5347ULL + h * 0x10001ULL + step * 0x2b9ULL));
        detail::NormalSampler normal(eng);
        out.query[h] = DenseMatrix(1, spec.head_dim);
        out.key[h] = DenseMatrix(1, spec.head_dim);
        out.value[h] = DenseMatrix(1, spec.head_dim);
        detail::fill_matrix(out.query[h], spec, normal);
        detail::fill_matrix(out.key[h], spec, normal);
        detail::fill_matrix(out.value[h], spec, normal);
    }
    return out;
}

}  // namespace kvq
