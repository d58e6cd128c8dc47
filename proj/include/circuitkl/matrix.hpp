#pragma once

#include <cstddef>
#include <vector>

#include "circuitkl/errors.hpp"

namespace circuitkl {

// Dense row-major matrix of doubles. Deliberately minimal: the evaluation
// pipeline needs bitwise-reproducible results across runs and worker counts,
// so every reduction below has a fixed summation order and there is no
// dispatch to vendor BLAS kernels.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0) {}

    double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    double* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

using Vector = std::vector<double>;

// out = a * b. Accumulation order per output element is k = 0..K-1.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        throw UsageError("matmul: inner dimensions differ (" + std::to_string(a.cols) + " vs " +
                         std::to_string(b.rows) + ")");
    Matrix out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const double av = arow[k];
            const double* brow = b.row(k);
            for (int j = 0; j < b.cols; ++j)
                orow[j] += av * brow[j];
        }
    }
    return out;
}

inline void add_inplace(Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw UsageError("add_inplace: shape mismatch");
    for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

// Add a row vector to every row.
inline void add_row_inplace(Matrix& a, const Vector& v) {
    if (static_cast<size_t>(a.cols) != v.size()) throw UsageError("add_row_inplace: width mismatch");
    for (int r = 0; r < a.rows; ++r) {
        double* row = a.row(r);
        for (int c = 0; c < a.cols; ++c) row[c] += v[c];
    }
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw UsageError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        if (d < 0) d = -d;
        if (d > m) m = d;
    }
    return m;
}

} // namespace circuitkl
