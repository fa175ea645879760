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
#include <iosfwd>
#include <string>
#include <vector>

#include "clearlab/matrix.hpp"
#include "clearlab/token_grid.hpp"

namespace clearlab {

enum class MaskBuilder : uint8_t { Full = 0, Clear = 1, Neighborhood = 2, Swin = 3, Strided = 4 };

const char *mask_builder_name(MaskBuilder b);

/// Boolean n x n attention mask over a joint text+image sequence,
/// bit-packed row-major. Row i lists the keys query i may attend.
/// Every builder keeps the diagonal set and gives text rows/columns
/// full visibility.
class AttentionMask {
public:
    AttentionMask(TokenGrid grid, MaskBuilder builder, std::vector<double> params);

    size_t n() const { return n_; }
    const TokenGrid &grid() const { return grid_; }
    MaskBuilder builder() const { return builder_; }
    const std::vector<double> &params() const { return params_; }

    bool get(size_t i, size_t j) const {
        return (words_[i * words_per_row_ + (j >> 6)] >> (j & 63)) & 1u;
    }
    void set(size_t i, size_t j) { words_[i * words_per_row_ + (j >> 6)] |= uint64_t(1) << (j & 63); }

    uint64_t popcount() const;
    uint64_t row_popcount(size_t i) const;
    double sparsity() const;

    /// Image-image sub-block as flat 0/1 bytes (row-major, n_image^2).
    std::vector<uint8_t> image_block_bits() const;
    /// Dense 0/1 matrix view of the image-image sub-block.
    Matrix image_block_matrix() const;
    /// Additive mask (0 kept / -inf dropped) for dense attention.
    Matrix to_additive() const;

    bool image_block_symmetric() const;
    bool subset_of(const AttentionMask &other) const;

    void save(const std::string &path) const;
    static AttentionMask load(const std::string &path);
    /// Plain PBM (P1) dump for eyeballing patterns.
    void write_pbm(std::ostream &os) const;

private:
    TokenGrid grid_;
    MaskBuilder builder_;
    std::vector<double> params_;
    size_t n_ = 0;
    size_t words_per_row_ = 0;
    std::vector<uint64_t> words_;
};

AttentionMask build_full(const TokenGrid &grid);

/// Eq-style circular window: image query i sees image key j iff
/// dx^2 + dy^2 < r^2 (strict); text rows and columns are fully visible.
AttentionMask build_clear(const TokenGrid &grid, double r);

/// Square window: image-image visibility iff max(|dx|, |dy|) <= half_width.
AttentionMask build_neighborhood(const TokenGrid &grid, int64_t half_width);

/// Non-overlapping window partition; odd layers use the partition shifted
/// by `shift`. Partial windows at the boundary form their own groups.
AttentionMask build_swin(const TokenGrid &grid, int64_t window, int64_t shift,
                         size_t layer_index);

/// Modular sampling: image-image visibility iff dx mod r == r_x and
/// dy mod r == r_y, with r_x = layer % r, r_y = layer / r (floor mods).
/// The diagonal is forced on. layer / r >= r is out of range.
AttentionMask build_strided(const TokenGrid &grid, int64_t r, size_t layer_index);

struct MaskStats {
    uint64_t popcount = 0;
    double sparsity = 0.0;
    size_t image_rank = 0;
    bool image_rank_exact = false;
};

/// popcount, sparsity and the image-image sub-block rank. Grids up to
/// 32x32 use the exact rational 0/1 oracle; larger ones fall back to
/// numerical SVD rank.
MaskStats mask_stats(const AttentionMask &m);

/// Number of distinct window groups a Swin builder call produces (the
/// expected image-block rank).
size_t swin_window_count(const TokenGrid &grid, int64_t window, int64_t shift,
                         size_t layer_index);

} // namespace clearlab
