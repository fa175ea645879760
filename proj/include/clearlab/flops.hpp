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

#include <string>
#include <vector>

#include "clearlab/mask.hpp"

namespace clearlab {

/// Attention-cost accounting: FLOPS = 4 * popcount(M) * c. Projections and
/// MLPs are deliberately excluded; this counts the masked score+value
/// product only.
uint64_t flops_of_mask(const AttentionMask &mask, uint64_t c);
uint64_t flops_of_popcount(uint64_t popcount, uint64_t c);

/// Text-image DiT shape used for the published cost tables:
/// c = 3072, 512 text tokens, image grid side = resolution / 16.
struct FluxConfig {
    uint64_t feature_dim = 3072;
    uint64_t n_text = 512;

    TokenGrid grid_for(uint64_t resolution) const {
        CLEARLAB_CHECK(resolution % 16 == 0, "resolution must be divisible by 16");
        const size_t side = resolution / 16;
        return TokenGrid(n_text, side, side);
    }
};

/// Analytic popcounts -- never materialize the mask. Exactly equal to the
/// corresponding builder's popcount (cross-checked in tests).
uint64_t full_popcount(const TokenGrid &grid);
uint64_t clear_popcount(const TokenGrid &grid, double r);

struct CostRow {
    std::string method;     // "full" or "clear"
    uint64_t resolution = 0;
    double radius = 0.0;    // 0 for full
    uint64_t n_tokens = 0;
    uint64_t popcount = 0;
    uint64_t flops = 0;
};

struct CostReport {
    std::vector<CostRow> rows;

    const CostRow *find(const std::string &method, uint64_t resolution, double radius) const;
    /// 1 - flops(clear)/flops(full) at one resolution.
    double reduction(uint64_t resolution, double radius) const;
};

/// Rows for full attention plus every radius, per resolution.
CostReport flux_cost_table(const FluxConfig &cfg, const std::vector<uint64_t> &resolutions,
                           const std::vector<double> &radii);

/// Lattice-disk to square window popcount ratio for an interior query:
/// |{(dx,dy): dx^2+dy^2 <= r^2}| / (2r+1)^2. Requires H, W >= 4r so
/// interior queries exist; position-independent by translation invariance.
double circle_square_overhead(const TokenGrid &grid, int64_t r);

} // namespace clearlab
