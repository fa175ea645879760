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

#include "clearlab/flops.hpp"

#include <algorithm>
#include <cmath>

namespace clearlab {

uint64_t flops_of_popcount(uint64_t popcount, uint64_t c) { return 4 * popcount * c; }

uint64_t flops_of_mask(const AttentionMask &mask, uint64_t c) {
    return flops_of_popcount(mask.popcount(), c);
}

uint64_t full_popcount(const TokenGrid &grid) {
    const uint64_t n = grid.n_total();
    return n * n;
}

uint64_t clear_popcount(const TokenGrid &grid, double r) {
    CLEARLAB_CHECK(r > 0.0, "clear radius must be positive");
    const uint64_t n = grid.n_total();
    const uint64_t nt = grid.n_text;
    const uint64_t ni = grid.n_image();
    // Text rows see everything; image rows see all text columns. The
    // image-image count sums, over every in-disk offset, the number of
    // placements of that offset inside the raster.
    uint64_t total = nt * n + ni * nt;
    const int64_t m = int64_t(std::ceil(r));
    const double rr = r * r;
    const int64_t w = int64_t(grid.width), h = int64_t(grid.height);
    for (int64_t dy = -m; dy <= m; ++dy) {
        if (std::llabs(dy) >= h) continue;
        for (int64_t dx = -m; dx <= m; ++dx) {
            if (std::llabs(dx) >= w) continue;
            if (double(dx * dx + dy * dy) < rr)
                total += uint64_t(w - std::llabs(dx)) * uint64_t(h - std::llabs(dy));
        }
    }
    return total;
}

const CostRow *CostReport::find(const std::string &method, uint64_t resolution,
                                double radius) const {
    for (const auto &row : rows)
        if (row.method == method && row.resolution == resolution && row.radius == radius)
            return &row;
    return nullptr;
}

double CostReport::reduction(uint64_t resolution, double radius) const {
    const CostRow *full = find("full", resolution, 0.0);
    const CostRow *clear = find("clear", resolution, radius);
    CLEARLAB_CHECK(full && clear, "reduction: missing rows");
    return 1.0 - double(clear->flops) / double(full->flops);
}

CostReport flux_cost_table(const FluxConfig &cfg, const std::vector<uint64_t> &resolutions,
                           const std::vector<double> &radii) {
    CostReport report;
    for (uint64_t res : resolutions) {
        const TokenGrid grid = cfg.grid_for(res);
        const uint64_t n = grid.n_total();
        uint64_t pop = full_popcount(grid);
        report.rows.push_back({"full", res, 0.0, n, pop, flops_of_popcount(pop, cfg.feature_dim)});
        for (double r : radii) {
            pop = clear_popcount(grid, r);
            report.rows.push_back(
                {"clear", res, r, n, pop, flops_of_popcount(pop, cfg.feature_dim)});
        }
    }
    return report;
}

double circle_square_overhead(const TokenGrid &grid, int64_t r) {
    CLEARLAB_CHECK(r >= 1, "overhead radius must be >= 1");
    CLEARLAB_CHECK(int64_t(grid.height) >= 4 * r && int64_t(grid.width) >= 4 * r,
                   "grid too small for an interior-dominated comparison (need H, W >= 4r)");
    // Closed lattice disk vs the diameter-matched (2r+1)^2 square.
    uint64_t disk = 0;
    for (int64_t dy = -r; dy <= r; ++dy)
        for (int64_t dx = -r; dx <= r; ++dx)
            if (dx * dx + dy * dy <= r * r) ++disk;
    const uint64_t square = uint64_t(2 * r + 1) * uint64_t(2 * r + 1);
    return double(disk) / double(square);
}

} // namespace clearlab
