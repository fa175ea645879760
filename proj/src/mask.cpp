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

#include "clearlab/mask.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <ostream>
#include <set>

#include "clearlab/rank.hpp"

namespace clearlab {

namespace {

constexpr char kMaskMagic[8] = {'C', 'L', 'M', 'A', 'S', 'K', '0', '1'};

int64_t floor_mod(int64_t a, int64_t m) {
    int64_t r = a % m;
    return r < 0 ? r + m : r;
}

} // namespace

const char *mask_builder_name(MaskBuilder b) {
    switch (b) {
    case MaskBuilder::Full: return "full";
    case MaskBuilder::Clear: return "clear";
    case MaskBuilder::Neighborhood: return "neighborhood";
    case MaskBuilder::Swin: return "swin";
    case MaskBuilder::Strided: return "strided";
    }
    return "?";
}

AttentionMask::AttentionMask(TokenGrid grid, MaskBuilder builder, std::vector<double> params)
    : grid_(grid), builder_(builder), params_(std::move(params)), n_(grid.n_total()),
      words_per_row_((n_ + 63) / 64), words_(n_ * words_per_row_, 0) {}

uint64_t AttentionMask::popcount() const {
    uint64_t total = 0;
    for (uint64_t w : words_) total += uint64_t(std::popcount(w));
    return total;
}

uint64_t AttentionMask::row_popcount(size_t i) const {
    uint64_t total = 0;
    for (size_t w = 0; w < words_per_row_; ++w)
        total += uint64_t(std::popcount(words_[i * words_per_row_ + w]));
    return total;
}

double AttentionMask::sparsity() const {
    return 1.0 - double(popcount()) / (double(n_) * double(n_));
}

std::vector<uint8_t> AttentionMask::image_block_bits() const {
    const size_t ni = grid_.n_image();
    std::vector<uint8_t> bits(ni * ni);
    for (size_t i = 0; i < ni; ++i)
        for (size_t j = 0; j < ni; ++j)
            bits[i * ni + j] = get(grid_.n_text + i, grid_.n_text + j) ? 1 : 0;
    return bits;
}

Matrix AttentionMask::image_block_matrix() const {
    const size_t ni = grid_.n_image();
    Matrix m(ni, ni);
    for (size_t i = 0; i < ni; ++i)
        for (size_t j = 0; j < ni; ++j)
            m(i, j) = get(grid_.n_text + i, grid_.n_text + j) ? 1.0 : 0.0;
    return m;
}

Matrix AttentionMask::to_additive() const {
    Matrix m(n_, n_);
    const double ninf = neg_infinity();
    for (size_t i = 0; i < n_; ++i)
        for (size_t j = 0; j < n_; ++j)
            if (!get(i, j)) m(i, j) = ninf;
    return m;
}

bool AttentionMask::image_block_symmetric() const {
    for (size_t i = grid_.n_text; i < n_; ++i)
        for (size_t j = i + 1; j < n_; ++j)
            if (get(i, j) != get(j, i)) return false;
    return true;
}

bool AttentionMask::subset_of(const AttentionMask &other) const {
    CLEARLAB_CHECK(n_ == other.n_, "subset_of: size mismatch");
    for (size_t w = 0; w < words_.size(); ++w)
        if (words_[w] & ~other.words_[w]) return false;
    return true;
}

void AttentionMask::save(const std::string &path) const {
    std::ofstream f(path, std::ios::binary);
    CLEARLAB_CHECK(f.good(), "cannot open mask file for writing: " + path);
    f.write(kMaskMagic, sizeof(kMaskMagic));
    auto put_u64 = [&](uint64_t v) { f.write(reinterpret_cast<const char *>(&v), 8); };
    put_u64(n_);
    put_u64(grid_.n_text);
    put_u64(grid_.height);
    put_u64(grid_.width);
    put_u64(uint64_t(builder_));
    put_u64(params_.size());
    for (double p : params_) f.write(reinterpret_cast<const char *>(&p), 8);
    f.write(reinterpret_cast<const char *>(words_.data()),
            std::streamsize(words_.size() * sizeof(uint64_t)));
    CLEARLAB_CHECK(f.good(), "mask write failed: " + path);
}

AttentionMask AttentionMask::load(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    CLEARLAB_CHECK(f.good(), "cannot open mask file: " + path);
    char magic[8];
    f.read(magic, 8);
    CLEARLAB_CHECK(f.good() && std::equal(magic, magic + 8, kMaskMagic), "bad mask file magic");
    auto get_u64 = [&]() {
        uint64_t v = 0;
        f.read(reinterpret_cast<char *>(&v), 8);
        return v;
    };
    uint64_t n = get_u64();
    uint64_t n_text = get_u64();
    uint64_t height = get_u64();
    uint64_t width = get_u64();
    auto builder = MaskBuilder(get_u64());
    uint64_t np = get_u64();
    std::vector<double> params(np);
    for (auto &p : params) f.read(reinterpret_cast<char *>(&p), 8);
    TokenGrid grid(n_text, height, width);
    CLEARLAB_CHECK(grid.n_total() == n, "mask file header inconsistent");
    AttentionMask m(grid, builder, std::move(params));
    f.read(reinterpret_cast<char *>(m.words_.data()),
           std::streamsize(m.words_.size() * sizeof(uint64_t)));
    CLEARLAB_CHECK(f.good(), "mask payload truncated: " + path);
    return m;
}

void AttentionMask::write_pbm(std::ostream &os) const {
    os << "P1\n" << n_ << " " << n_ << "\n";
    for (size_t i = 0; i < n_; ++i) {
        for (size_t j = 0; j < n_; ++j) os << (get(i, j) ? '1' : '0') << (j + 1 < n_ ? ' ' : '\n');
    }
}

namespace {

/// Shared driver: text clause + a per-pair image predicate.
template <typename Pred>
AttentionMask build_with_predicate(const TokenGrid &grid, MaskBuilder tag,
                                   std::vector<double> params, Pred &&image_pair_visible) {
    AttentionMask m(grid, tag, std::move(params));
    const size_t n = grid.n_total();
    const size_t nt = grid.n_text;
    for (size_t i = 0; i < n; ++i) {
        if (i < nt) {
            for (size_t j = 0; j < n; ++j) m.set(i, j);
            continue;
        }
        for (size_t j = 0; j < nt; ++j) m.set(i, j);
        const int64_t xi = grid.x_of(i), yi = grid.y_of(i);
        for (size_t j = nt; j < n; ++j) {
            const int64_t dx = xi - grid.x_of(j);
            const int64_t dy = yi - grid.y_of(j);
            if (i == j || image_pair_visible(dx, dy, i, j)) m.set(i, j);
        }
    }
    return m;
}

} // namespace

AttentionMask build_full(const TokenGrid &grid) {
    return build_with_predicate(grid, MaskBuilder::Full, {},
                                [](int64_t, int64_t, size_t, size_t) { return true; });
}

AttentionMask build_clear(const TokenGrid &grid, double r) {
    CLEARLAB_CHECK(r > 0.0, "clear radius must be positive");
    const double rr = r * r;
    return build_with_predicate(grid, MaskBuilder::Clear, {r},
                                [rr](int64_t dx, int64_t dy, size_t, size_t) {
                                    return double(dx * dx + dy * dy) < rr;
                                });
}

AttentionMask build_neighborhood(const TokenGrid &grid, int64_t half_width) {
    CLEARLAB_CHECK(half_width >= 0, "neighborhood half_width must be >= 0");
    return build_with_predicate(grid, MaskBuilder::Neighborhood, {double(half_width)},
                                [half_width](int64_t dx, int64_t dy, size_t, size_t) {
                                    return std::max(std::llabs(dx), std::llabs(dy)) <= half_width;
                                });
}

namespace {

int64_t swin_group_id(int64_t x, int64_t y, int64_t window, int64_t applied_shift, int64_t width) {
    const int64_t gx = (x + applied_shift) / window;
    const int64_t gy = (y + applied_shift) / window;
    const int64_t groups_x = (width + applied_shift + window - 1) / window;
    return gy * groups_x + gx;
}

} // namespace

AttentionMask build_swin(const TokenGrid &grid, int64_t window, int64_t shift,
                         size_t layer_index) {
    CLEARLAB_CHECK(window >= 1, "swin window must be >= 1");
    CLEARLAB_CHECK(shift >= 0 && shift < window, "swin shift must satisfy 0 <= shift < window");
    const int64_t applied = (layer_index % 2 == 1) ? shift : 0;
    const int64_t width = int64_t(grid.width);
    return build_with_predicate(
        grid, MaskBuilder::Swin, {double(window), double(shift), double(layer_index)},
        [=, &grid](int64_t, int64_t, size_t i, size_t j) {
            return swin_group_id(grid.x_of(i), grid.y_of(i), window, applied, width) ==
                   swin_group_id(grid.x_of(j), grid.y_of(j), window, applied, width);
        });
}

size_t swin_window_count(const TokenGrid &grid, int64_t window, int64_t shift,
                         size_t layer_index) {
    CLEARLAB_CHECK(window >= 1 && shift >= 0 && shift < window, "bad swin parameters");
    const int64_t applied = (layer_index % 2 == 1) ? shift : 0;
    std::set<int64_t> ids;
    for (int64_t y = 0; y < int64_t(grid.height); ++y)
        for (int64_t x = 0; x < int64_t(grid.width); ++x)
            ids.insert(swin_group_id(x, y, window, applied, int64_t(grid.width)));
    return ids.size();
}

AttentionMask build_strided(const TokenGrid &grid, int64_t r, size_t layer_index) {
    CLEARLAB_CHECK(r >= 1, "stride must be >= 1");
    const int64_t rx = int64_t(layer_index) % r;
    const int64_t ry = int64_t(layer_index) / r;
    CLEARLAB_CHECK(ry < r, "strided layer offset out of range (layer / r >= r)");
    return build_with_predicate(grid, MaskBuilder::Strided,
                                {double(r), double(layer_index)},
                                [r, rx, ry](int64_t dx, int64_t dy, size_t, size_t) {
                                    return floor_mod(dx, r) == rx && floor_mod(dy, r) == ry;
                                });
}

MaskStats mask_stats(const AttentionMask &m) {
    MaskStats s;
    s.popcount = m.popcount();
    s.sparsity = m.sparsity();
    const TokenGrid &g = m.grid();
    if (g.n_image() <= 32 * 32) {
        s.image_rank = rank_exact_binary(m.image_block_bits(), g.n_image(), g.n_image());
        s.image_rank_exact = true;
    } else {
        s.image_rank = rank_of(m.image_block_matrix());
        s.image_rank_exact = false;
    }
    return s;
}

} // namespace clearlab
