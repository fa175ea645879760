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

#include "clearlab/rank.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <boost/multiprecision/cpp_int.hpp>

namespace clearlab {

std::vector<double> singular_values(const Matrix &m) {
    CLEARLAB_CHECK(m.all_finite(), "singular_values: non-finite input");
    // One-sided Jacobi on the tall orientation: orthogonalize column pairs;
    // singular values are the column norms. Working on A itself (not A^T A)
    // keeps full precision, which the 1e-8 rank threshold needs.
    Matrix a = (m.rows() >= m.cols()) ? m : m.transpose();
    const size_t rows = a.rows(), n = a.cols();
    const int max_sweeps = 60;
    const double conv = 1e-15;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (size_t i = 0; i + 1 < n; ++i) {
            for (size_t j = i + 1; j < n; ++j) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (size_t r = 0; r < rows; ++r) {
                    const double x = a(r, i), y = a(r, j);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if (std::fabs(gamma) <= conv * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t =
                    (zeta >= 0 ? 1.0 : -1.0) / (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (size_t r = 0; r < rows; ++r) {
                    const double x = a(r, i), y = a(r, j);
                    a(r, i) = c * x - s * y;
                    a(r, j) = s * x + c * y;
                }
            }
        }
        if (!rotated) break;
    }
    std::vector<double> sv(n);
    for (size_t j = 0; j < n; ++j) {
        double norm2 = 0.0;
        for (size_t r = 0; r < rows; ++r) norm2 += a(r, j) * a(r, j);
        sv[j] = std::sqrt(norm2);
    }
    std::sort(sv.begin(), sv.end(), std::greater<>());
    return sv;
}

size_t rank_of(const Matrix &m, double tol) {
    if (m.size() == 0) return 0;
    std::vector<double> sv = singular_values(m);
    double smax = sv.empty() ? 0.0 : sv.front();
    if (smax == 0.0) return 0;
    size_t r = 0;
    for (double s : sv)
        if (s > tol * smax) ++r;
    return r;
}

size_t rank_exact_binary(const std::vector<uint8_t> &bits, size_t rows, size_t cols) {
    CLEARLAB_CHECK(bits.size() == rows * cols, "rank_exact_binary: size mismatch");
    for (uint8_t b : bits) CLEARLAB_CHECK(b == 0 || b == 1, "rank_exact_binary: entries must be 0/1");

    // Deduplicate rows, then columns. Duplicates never change rank and the
    // structured masks here (Swin in particular) collapse dramatically.
    std::map<std::vector<uint8_t>, bool> seen_rows;
    std::vector<std::vector<uint8_t>> distinct;
    for (size_t r = 0; r < rows; ++r) {
        std::vector<uint8_t> row(bits.begin() + ptrdiff_t(r * cols), bits.begin() + ptrdiff_t((r + 1) * cols));
        if (seen_rows.emplace(std::move(row), true).second)
            distinct.push_back({bits.begin() + ptrdiff_t(r * cols), bits.begin() + ptrdiff_t((r + 1) * cols)});
    }
    size_t nr = distinct.size();
    std::map<std::vector<uint8_t>, bool> seen_cols;
    std::vector<size_t> keep_cols;
    for (size_t c = 0; c < cols; ++c) {
        std::vector<uint8_t> col(nr);
        for (size_t r = 0; r < nr; ++r) col[r] = distinct[r][c];
        if (seen_cols.emplace(std::move(col), true).second) keep_cols.push_back(c);
    }
    size_t nc = keep_cols.size();

    using rational = boost::multiprecision::cpp_rational;
    std::vector<std::vector<rational>> a(nr, std::vector<rational>(nc));
    for (size_t r = 0; r < nr; ++r)
        for (size_t c = 0; c < nc; ++c) a[r][c] = int(distinct[r][keep_cols[c]]);

    size_t rank = 0;
    size_t pivot_row = 0;
    for (size_t col = 0; col < nc && pivot_row < nr; ++col) {
        size_t sel = nr;
        for (size_t r = pivot_row; r < nr; ++r) {
            if (a[r][col] != 0) {
                sel = r;
                break;
            }
        }
        if (sel == nr) continue;
        std::swap(a[pivot_row], a[sel]);
        const rational piv = a[pivot_row][col];
        for (size_t r = pivot_row + 1; r < nr; ++r) {
            if (a[r][col] == 0) continue;
            const rational f = a[r][col] / piv;
            for (size_t c = col; c < nc; ++c) a[r][c] -= f * a[pivot_row][c];
        }
        ++pivot_row;
        ++rank;
    }
    return rank;
}

} // namespace clearlab
