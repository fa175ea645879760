// Copyright 2025 the clearlab authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "clearlab/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace clearlab {

Matrix::Matrix(size_t rows, size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    CLEARLAB_CHECK(data_.size() == rows_ * cols_, "matrix data length must be rows*cols");
}

Matrix Matrix::identity(size_t n) {
    Matrix m(n, n);
    for (size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::random_normal(size_t rows, size_t cols, Rng &rng, double stddev) {
    Matrix m(rows, cols);
    for (auto &v : m.data()) v = stddev * rng.normal();
    return m;
}

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix Matrix::transpose() const {
    Matrix t(cols_, rows_);
    for (size_t r = 0; r < rows_; ++r)
        for (size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
}

Matrix Matrix::slice_rows(size_t r0, size_t r1) const {
    CLEARLAB_CHECK(r0 <= r1 && r1 <= rows_, "row slice out of range");
    Matrix s(r1 - r0, cols_);
    std::copy(row_ptr(r0), row_ptr(r0) + (r1 - r0) * cols_, s.data().begin());
    return s;
}

Matrix Matrix::slice_cols(size_t c0, size_t c1) const {
    CLEARLAB_CHECK(c0 <= c1 && c1 <= cols_, "col slice out of range");
    Matrix s(rows_, c1 - c0);
    for (size_t r = 0; r < rows_; ++r)
        std::copy(row_ptr(r) + c0, row_ptr(r) + c1, s.row_ptr(r));
    return s;
}

uint64_t Matrix::content_hash() const {
    uint64_t h = fnv1a(&rows_, sizeof(rows_));
    h = fnv1a(&cols_, sizeof(cols_), h);
    return fnv1a(data_.data(), data_.size() * sizeof(double), h);
}

Matrix matmul(const Matrix &a, const Matrix &b) {
    CLEARLAB_CHECK(a.cols() == b.rows(), "matmul: inner dimensions differ");
    Matrix out(a.rows(), b.cols());
    const size_t n = a.rows(), k = a.cols(), m = b.cols();
    for (size_t i = 0; i < n; ++i) {
        double *o = out.row_ptr(i);
        const double *ar = a.row_ptr(i);
        for (size_t p = 0; p < k; ++p) {
            const double av = ar[p];
            if (av == 0.0) continue;
            const double *br = b.row_ptr(p);
            for (size_t j = 0; j < m; ++j) o[j] += av * br[j];
        }
    }
    return out;
}

Matrix matmul_nt(const Matrix &a, const Matrix &b) {
    CLEARLAB_CHECK(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
    Matrix out(a.rows(), b.rows());
    const size_t k = a.cols();
    for (size_t i = 0; i < a.rows(); ++i) {
        const double *ar = a.row_ptr(i);
        double *o = out.row_ptr(i);
        for (size_t j = 0; j < b.rows(); ++j) {
            const double *br = b.row_ptr(j);
            double acc = 0.0;
            for (size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
            o[j] = acc;
        }
    }
    return out;
}

Matrix matmul_tn(const Matrix &a, const Matrix &b) {
    CLEARLAB_CHECK(a.rows() == b.rows(), "matmul_tn: inner dimensions differ");
    Matrix out(a.cols(), b.cols());
    const size_t n = a.rows();
    for (size_t p = 0; p < n; ++p) {
        const double *ar = a.row_ptr(p);
        const double *br = b.row_ptr(p);
        for (size_t i = 0; i < a.cols(); ++i) {
            const double av = ar[i];
            if (av == 0.0) continue;
            double *o = out.row_ptr(i);
            for (size_t j = 0; j < b.cols(); ++j) o[j] += av * br[j];
        }
    }
    return out;
}

Matrix add(const Matrix &a, const Matrix &b) {
    CLEARLAB_CHECK(a.same_shape(b), "add: shape mismatch");
    Matrix out = a;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
    return out;
}

Matrix sub(const Matrix &a, const Matrix &b) {
    CLEARLAB_CHECK(a.same_shape(b), "sub: shape mismatch");
    Matrix out = a;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
    return out;
}

Matrix scale(const Matrix &a, double s) {
    Matrix out = a;
    for (auto &v : out.data()) v *= s;
    return out;
}

Matrix hadamard(const Matrix &a, const Matrix &b) {
    CLEARLAB_CHECK(a.same_shape(b), "hadamard: shape mismatch");
    Matrix out = a;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.data()[i];
    return out;
}

Matrix concat_rows(const Matrix &top, const Matrix &bottom) {
    if (top.rows() == 0) return bottom;
    if (bottom.rows() == 0) return top;
    CLEARLAB_CHECK(top.cols() == bottom.cols(), "concat_rows: column mismatch");
    Matrix out(top.rows() + bottom.rows(), top.cols());
    std::copy(top.data().begin(), top.data().end(), out.data().begin());
    std::copy(bottom.data().begin(), bottom.data().end(), out.data().begin() + ptrdiff_t(top.size()));
    return out;
}

Matrix concat_cols(const Matrix &left, const Matrix &right) {
    if (left.cols() == 0) return right;
    if (right.cols() == 0) return left;
    CLEARLAB_CHECK(left.rows() == right.rows(), "concat_cols: row mismatch");
    Matrix out(left.rows(), left.cols() + right.cols());
    for (size_t r = 0; r < left.rows(); ++r) {
        std::copy(left.row_ptr(r), left.row_ptr(r) + left.cols(), out.row_ptr(r));
        std::copy(right.row_ptr(r), right.row_ptr(r) + right.cols(), out.row_ptr(r) + left.cols());
    }
    return out;
}

double max_abs_diff(const Matrix &a, const Matrix &b) {
    CLEARLAB_CHECK(a.same_shape(b), "max_abs_diff: shape mismatch");
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
    return m;
}

double frobenius_norm(const Matrix &a) {
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    return std::sqrt(s);
}

double neg_infinity() { return -std::numeric_limits<double>::infinity(); }

Matrix softmax_rows(const Matrix &x, const std::optional<Matrix> &additive_mask) {
    if (additive_mask) {
        CLEARLAB_CHECK(x.same_shape(*additive_mask), "softmax_rows: mask shape mismatch");
    }
    for (double v : x.data()) {
        CLEARLAB_CHECK(!std::isnan(v), "softmax_rows: NaN input");
    }
    Matrix out(x.rows(), x.cols());
    for (size_t r = 0; r < x.rows(); ++r) {
        const double *xr = x.row_ptr(r);
        const double *mr = additive_mask ? additive_mask->row_ptr(r) : nullptr;
        double mx = neg_infinity();
        for (size_t c = 0; c < x.cols(); ++c) {
            double v = xr[c] + (mr ? mr[c] : 0.0);
            mx = std::max(mx, v);
        }
        double *o = out.row_ptr(r);
        if (!std::isfinite(mx)) continue; // fully masked row -> all zeros
        double sum = 0.0;
        for (size_t c = 0; c < x.cols(); ++c) {
            double v = xr[c] + (mr ? mr[c] : 0.0);
            double e = std::isfinite(v) ? std::exp(v - mx) : 0.0;
            o[c] = e;
            sum += e;
        }
        for (size_t c = 0; c < x.cols(); ++c) o[c] /= sum;
    }
    return out;
}

} // namespace clearlab
