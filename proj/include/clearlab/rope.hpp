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

#include <vector>

#include "clearlab/matrix.hpp"
#include "clearlab/token_grid.hpp"

namespace clearlab {

/// Axis-split 2D rotary embedding. Channels [0, head_dim/2) rotate with the
/// token's x coordinate, channels [head_dim/2, head_dim) with y, in disjoint
/// consecutive pairs. Pair t of an axis uses frequency
///     theta_t = (base * ntk_factor)^(-2t / head_dim_axis),
/// head_dim_axis = head_dim / 2. Text tokens sit at (0,0), i.e. unrotated.
struct RopeConfig {
    size_t head_dim = 0;
    double base = 10000.0;
    double ntk_factor = 1.0;
    ClipMode clip = ClipMode::none();

    RopeConfig() = default;
    RopeConfig(size_t head_dim_, double base_ = 10000.0, double ntk_factor_ = 1.0,
               ClipMode clip_ = ClipMode::none())
        : head_dim(head_dim_), base(base_), ntk_factor(ntk_factor_), clip(clip_) {
        CLEARLAB_CHECK(head_dim > 0 && head_dim % 4 == 0,
                       "head_dim must be a positive multiple of 4 (even x/y pair split)");
        CLEARLAB_CHECK(ntk_factor >= 1.0, "ntk_factor must be >= 1");
    }

    size_t axis_dim() const { return head_dim / 2; }
    size_t pairs_per_axis() const { return head_dim / 4; }

    /// theta_t for pair index t within one axis.
    double freq(size_t t) const;
};

/// Apply per-token rotations to a matrix of head vectors (one row per token
/// of the grid's joint sequence). Image tokens rotate by their (x, y)
/// position; text tokens pass through. Requires cfg.clip to be none --
/// clipped variants only exist at the pairwise-score level.
Matrix rope_apply(const Matrix &q_or_k, const TokenGrid &grid, const RopeConfig &cfg);

/// Rotated dot product of two head vectors whose relative offset is
/// (dx, dy): q . R(-dx, -dy) k, the value per-token rotation produces for
/// tokens separated by that offset.
double rope_pair_score(const double *q, const double *k, const RopeConfig &cfg, double dx,
                       double dy);

/// Full n x n score matrix QK^T under rotary encoding with the config's
/// distance clipping applied to image-image pairs. Pairs involving a text
/// token use the text position (0,0) and bypass clipping. No 1/sqrt(c)
/// scaling; callers add it.
Matrix rope_pairwise_scores(const Matrix &q, const Matrix &k, const TokenGrid &grid,
                            const RopeConfig &cfg);

/// Rotation angles for every token row: n_tokens x pairs-per-token
/// (x pairs then y pairs). The tape's rotation op consumes this layout.
std::vector<double> rope_angles(const TokenGrid &grid, const RopeConfig &cfg);

} // namespace clearlab
