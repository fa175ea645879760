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

#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "clearlab/common.hpp"

namespace clearlab {

/// Dense row-major matrix, 64-bit elements. The whole toy lab runs at
/// double precision; finite-difference gradient checks need the headroom.
class Matrix {
public:
    Matrix() = default;
    Matrix(size_t rows, size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(size_t rows, size_t cols, std::vector<double> data);

    static Matrix identity(size_t n);
    static Matrix random_normal(size_t rows, size_t cols, Rng &rng, double stddev = 1.0);

    size_t rows() const { return rows_; }
    size_t cols() const { return cols_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double &operator()(size_t r, size_t c) { return data_[r * cols_ + c]; }
    double operator()(size_t r, size_t c) const { return data_[r * cols_ + c]; }

    double *row_ptr(size_t r) { return data_.data() + r * cols_; }
    const double *row_ptr(size_t r) const { return data_.data() + r * cols_; }

    const std::vector<double> &data() const { return data_; }
    std::vector<double> &data() { return data_; }

    bool same_shape(const Matrix &o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    bool all_finite() const;

    Matrix transpose() const;
    Matrix slice_rows(size_t r0, size_t r1) const;
    Matrix slice_cols(size_t c0, size_t c1) const;

    uint64_t content_hash() const;

private:
    size_t rows_ = 0;
    size_t cols_ = 0;
    std::vector<double> data_;
};

/// a * b
Matrix matmul(const Matrix &a, const Matrix &b);
/// a * b^T without materializing the transpose
Matrix matmul_nt(const Matrix &a, const Matrix &b);
/// a^T * b without materializing the transpose
Matrix matmul_tn(const Matrix &a, const Matrix &b);

Matrix add(const Matrix &a, const Matrix &b);
Matrix sub(const Matrix &a, const Matrix &b);
Matrix scale(const Matrix &a, double s);
Matrix hadamard(const Matrix &a, const Matrix &b);
Matrix concat_rows(const Matrix &top, const Matrix &bottom);
Matrix concat_cols(const Matrix &left, const Matrix &right);

double max_abs_diff(const Matrix &a, const Matrix &b);
double frobenius_norm(const Matrix &a);

/// Row-wise numerically stable softmax. An optional additive mask of the
/// same shape is added to the logits first; masked-out entries carry -inf.
/// Rows whose entries are all masked come back as all-zero (the sentinel
/// callers that forbid empty rows must check themselves).
/// Throws on shape mismatch or non-finite (NaN) input in x.
Matrix softmax_rows(const Matrix &x, const std::optional<Matrix> &additive_mask = std::nullopt);

/// -inf constant used for masked logits.
double neg_infinity();

} // namespace clearlab
