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
#include <cstdint>

#include "clearlab/common.hpp"

namespace clearlab {

/// Joint sequence layout: n_text prefix tokens followed by an H x W image
/// raster. Image token at raster index k sits at (x, y) = (k % W, k / W).
struct TokenGrid {
    size_t n_text = 0;
    size_t height = 0;
    size_t width = 0;

    TokenGrid() = default;
    TokenGrid(size_t n_text_, size_t height_, size_t width_)
        : n_text(n_text_), height(height_), width(width_) {
        CLEARLAB_CHECK(height > 0 && width > 0, "grid must have positive extent");
    }

    size_t n_image() const { return height * width; }
    size_t n_total() const { return n_text + n_image(); }

    bool is_text(size_t token) const { return token < n_text; }

    int64_t x_of(size_t token) const {
        CLEARLAB_CHECK(!is_text(token) && token < n_total(), "x_of: not an image token");
        return int64_t((token - n_text) % width);
    }
    int64_t y_of(size_t token) const {
        CLEARLAB_CHECK(!is_text(token) && token < n_total(), "y_of: not an image token");
        return int64_t((token - n_text) / width);
    }
    size_t token_at(int64_t x, int64_t y) const {
        CLEARLAB_CHECK(x >= 0 && x < int64_t(width) && y >= 0 && y < int64_t(height),
                       "token_at: coordinate outside grid");
        return n_text + size_t(y) * width + size_t(x);
    }
};

struct Offset2D {
    int64_t dx = 0;
    int64_t dy = 0;
};

/// Signed relative offset (x_i - x_j, y_i - y_j) between two image tokens.
/// Text tokens carry no 2D position; passing one is an error.
Offset2D relative_offsets(const TokenGrid &grid, size_t i, size_t j);

enum class ClipKind : uint8_t { None, Remote, Local };

/// Distance-clip perturbation applied to one axis of a relative offset.
/// Remote(r): clamp into [-r, r]. Local(r): push |d| < r out to sign(d)*r,
/// with d = 0 mapping to +r.
struct ClipMode {
    ClipKind kind = ClipKind::None;
    double radius = 0.0;

    static ClipMode none() { return {ClipKind::None, 0.0}; }
    static ClipMode remote(double r) {
        CLEARLAB_CHECK(r > 0.0, "remote clip radius must be positive");
        return {ClipKind::Remote, r};
    }
    static ClipMode local(double r) {
        CLEARLAB_CHECK(r > 0.0, "local clip radius must be positive");
        return {ClipKind::Local, r};
    }
};

double clip_offset(double d, const ClipMode &mode);

} // namespace clearlab
