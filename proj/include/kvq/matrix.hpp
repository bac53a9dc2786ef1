#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "kvq/errors.hpp"

namespace kvq {

// Row-major dense matrix of 32-bit reals. Carries keys, values, queries and
// score rows. Shared read-only across workers; mutation (append_row) is
// single-writer.
struct DenseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;  // rows * cols, row-major

    DenseMatrix() = default;

    DenseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

    DenseMatrix(std::size_t r, std::size_t c, std::vector<float> d)
        : rows(r), cols(c), data(std::move(d)) {
        if (data.size() != rows * cols) {
            throw domain_error("matrix data length does not match shape");
        }
    }

    float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    float* row(std::size_t r) { return data.data() + r * cols; }
    const float* row(std::size_t r) const { return data.data() + r * cols; }
    std::span<const float> row_span(std::size_t r) const { return {row(r), cols}; }

    bool empty() const { return rows == 0 || cols == 0; }

    void append_row(std::span<const float> values) {
        if (values.size() != cols) {
            throw domain_error("append_row: length " + std::to_string(values.size()) +
                               " does not match cols " + std::to_string(cols));
        }
        data.insert(data.end(), values.begin(), values.end());
        ++rows;
    }

    void reserve_rows(std::size_t total) { data.reserve(total * cols); }

    bool all_finite() const {
        for (float v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    bool operator==(const DenseMatrix&) const = default;
};

}  // namespace kvq
