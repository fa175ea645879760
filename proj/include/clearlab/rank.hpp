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

#include <cstdint>
#include <vector>

#include "clearlab/matrix.hpp"

namespace clearlab {

/// Singular values of m, descending (computed as eigenvalues of the Gram
/// matrix via cyclic Jacobi; plenty for the <=512x512 diagnostics here).
std::vector<double> singular_values(const Matrix &m);

/// Numerical rank: number of singular values > tol * sigma_max.
/// Default tol 1e-8. Throws on non-finite input.
size_t rank_of(const Matrix &m, double tol = 1e-8);

/// Exact rank of a 0/1 matrix (row-major, rows x cols) over the rationals.
/// Identical rows/columns are deduplicated first (rank-preserving), then
/// exact rational Gaussian elimination. Slow by design; intended as the
/// oracle path for mask sub-blocks.
size_t rank_exact_binary(const std::vector<uint8_t> &bits, size_t rows, size_t cols);

} // namespace clearlab
