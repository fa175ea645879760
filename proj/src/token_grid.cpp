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

#include "clearlab/token_grid.hpp"

#include <algorithm>
#include <cmath>

namespace clearlab {

Offset2D relative_offsets(const TokenGrid &grid, size_t i, size_t j) {
    CLEARLAB_CHECK(!grid.is_text(i) && !grid.is_text(j),
                   "relative_offsets: text tokens carry no 2D position");
    return {grid.x_of(i) - grid.x_of(j), grid.y_of(i) - grid.y_of(j)};
}

double clip_offset(double d, const ClipMode &mode) {
    switch (mode.kind) {
    case ClipKind::None:
        return d;
    case ClipKind::Remote:
        return std::clamp(d, -mode.radius, mode.radius);
    case ClipKind::Local:
        if (std::fabs(d) < mode.radius) return d >= 0.0 ? mode.radius : -mode.radius;
        return d;
    }
    return d;
}

} // namespace clearlab
