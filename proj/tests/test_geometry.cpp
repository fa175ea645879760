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

#include <cmath>

#include <doctest.h>

#include "clearlab/rope.hpp"
#include "clearlab/token_grid.hpp"

using namespace clearlab;

TEST_CASE("relative offsets basics") {
    TokenGrid g(2, 4, 5); // 2 text, 4x5 raster
    size_t i = g.token_at(3, 1), j = g.token_at(0, 1);
    auto d = relative_offsets(g, i, j);
    CHECK(d.dx == 3);
    CHECK(d.dy == 0);
    auto z = relative_offsets(g, i, i);
    CHECK(z.dx == 0);
    CHECK(z.dy == 0);
    auto n = relative_offsets(g, j, i);
    CHECK(n.dx == -d.dx);
    CHECK(n.dy == -d.dy);
    CHECK_THROWS_AS(relative_offsets(g, 0, i), CheckError); // text token
}

TEST_CASE("remote clip clamps, local clip pushes out") {
    auto remote8 = ClipMode::remote(8);
    CHECK(clip_offset(20, remote8) == 8);
    CHECK(clip_offset(-3, remote8) == -3);
    auto local2 = ClipMode::local(2);
    CHECK(clip_offset(1, local2) == 2);
    CHECK(clip_offset(5, local2) == 5);
    CHECK(clip_offset(-1, local2) == -2);
    CHECK(clip_offset(0, local2) == 2); // zero maps to +r
}

TEST_CASE("clipping is idempotent") {
    for (double d : {-30.0, -8.0, -2.5, 0.0, 1.0, 7.0, 40.0}) {
        for (auto mode : {ClipMode::remote(8.0), ClipMode::local(3.0)}) {
            double once = clip_offset(d, mode);
            CHECK(clip_offset(once, mode) == once);
        }
    }
}

TEST_CASE("remote clip with covering radius is the identity on the grid") {
    TokenGrid g(0, 4, 4);
    auto mode = ClipMode::remote(3.0); // max |offset| on a 4x4 grid is 3
    for (size_t i = 0; i < g.n_total(); ++i)
        for (size_t j = 0; j < g.n_total(); ++j) {
            auto d = relative_offsets(g, i, j);
            CHECK(clip_offset(double(d.dx), mode) == double(d.dx));
            CHECK(clip_offset(double(d.dy), mode) == double(d.dy));
        }
}

TEST_CASE("rope: zero offset leaves dot products unrotated") {
    Rng rng(21);
    TokenGrid g(1, 2, 2);
    RopeConfig cfg(8);
    Matrix q = Matrix::random_normal(g.n_total(), 8, rng);
    Matrix k = Matrix::random_normal(g.n_total(), 8, rng);
    Matrix qr = rope_apply(q, g, cfg);
    Matrix kr = rope_apply(k, g, cfg);
    for (size_t t = g.n_text; t < g.n_total(); ++t) {
        double plain = 0.0, rotated = 0.0;
        for (size_t c = 0; c < 8; ++c) {
            plain += q(t, c) * k(t, c);
            rotated += qr(t, c) * kr(t, c);
        }
        CHECK(rotated == doctest::Approx(plain).epsilon(1e-12));
    }
}

TEST_CASE("rope scores depend on positions only through the offset") {
    // Two grids; the second reads the same tokens shifted by (+5, +5)
    // inside a larger raster. All pairwise rotated dot products must agree.
    Rng rng(22);
    const size_t hd = 16;
    RopeConfig cfg(hd);
    TokenGrid small(0, 3, 3);
    TokenGrid big(0, 16, 16);
    Matrix q = Matrix::random_normal(small.n_total(), hd, rng);
    Matrix k = Matrix::random_normal(small.n_total(), hd, rng);

    Matrix q_small = rope_apply(q, small, cfg);
    Matrix k_small = rope_apply(k, small, cfg);

    // place the same 3x3 block at offset (5,5) in the big grid
    Matrix qb(big.n_total(), hd), kb(big.n_total(), hd);
    for (size_t t = 0; t < small.n_total(); ++t) {
        size_t dst = big.token_at(small.x_of(t) + 5, small.y_of(t) + 5);
        for (size_t c = 0; c < hd; ++c) {
            qb(dst, c) = q(t, c);
            kb(dst, c) = k(t, c);
        }
    }
    Matrix qrb = rope_apply(qb, big, cfg);
    Matrix krb = rope_apply(kb, big, cfg);

    for (size_t a = 0; a < small.n_total(); ++a) {
        for (size_t b = 0; b < small.n_total(); ++b) {
            double s1 = 0.0, s2 = 0.0;
            size_t a2 = big.token_at(small.x_of(a) + 5, small.y_of(a) + 5);
            size_t b2 = big.token_at(small.x_of(b) + 5, small.y_of(b) + 5);
            for (size_t c = 0; c < hd; ++c) {
                s1 += q_small(a, c) * k_small(b, c);
                s2 += qrb(a2, c) * krb(b2, c);
            }
            CHECK(s1 == doctest::Approx(s2).epsilon(1e-10));
        }
    }
}

TEST_CASE("pairwise scores match per-token rotation when unclipped") {
    Rng rng(23);
    TokenGrid g(2, 3, 4);
    RopeConfig cfg(8);
    Matrix q = Matrix::random_normal(g.n_total(), 8, rng);
    Matrix k = Matrix::random_normal(g.n_total(), 8, rng);
    Matrix via_tokens = matmul_nt(rope_apply(q, g, cfg), rope_apply(k, g, cfg));
    Matrix via_pairs = rope_pairwise_scores(q, k, g, cfg);
    CHECK(max_abs_diff(via_tokens, via_pairs) < 1e-10);
}

TEST_CASE("remote clip with grid-covering radius is bit-identical to unclipped") {
    Rng rng(24);
    TokenGrid g(1, 3, 3);
    Matrix q = Matrix::random_normal(g.n_total(), 8, rng);
    Matrix k = Matrix::random_normal(g.n_total(), 8, rng);
    RopeConfig plain(8);
    RopeConfig clipped(8, 10000.0, 1.0, ClipMode::remote(5.0));
    Matrix a = rope_pairwise_scores(q, k, g, plain);
    Matrix b = rope_pairwise_scores(q, k, g, clipped);
    CHECK(max_abs_diff(a, b) == 0.0);
}

TEST_CASE("ntk factor scales rotation angles per channel pair") {
    // offset (1,0): the x-axis rotation angle of pair t is theta_t, and
    // theta_t(ntk)/theta_t(1) must equal ntk^(-2t/axis_dim).
    RopeConfig base_cfg(16);
    RopeConfig ntk_cfg(16, 10000.0, 10.0);
    for (size_t t = 0; t < base_cfg.pairs_per_axis(); ++t) {
        double expected = std::pow(10.0, -2.0 * double(t) / double(base_cfg.axis_dim()));
        CHECK(ntk_cfg.freq(t) / base_cfg.freq(t) == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("rope validates head_dim") {
    CHECK_THROWS_AS(RopeConfig(6), CheckError);  // pairs cannot split across axes
    CHECK_THROWS_AS(RopeConfig(7), CheckError);  // odd
    CHECK_THROWS_AS(RopeConfig(8, 10000.0, 0.5), CheckError); // ntk < 1
}

TEST_CASE("local clip perturbs near pairs and spares far ones") {
    Rng rng(25);
    TokenGrid g(0, 8, 8);
    RopeConfig plain(8);
    RopeConfig local(8, 10000.0, 1.0, ClipMode::local(2.0));
    Matrix q = Matrix::random_normal(g.n_total(), 8, rng);
    Matrix k = Matrix::random_normal(g.n_total(), 8, rng);
    Matrix a = rope_pairwise_scores(q, k, g, plain);
    Matrix b = rope_pairwise_scores(q, k, g, local);
    size_t i = g.token_at(4, 4);
    // (dx,dy)=(4,0): both axes untouched (|4|>=2, |0| -> wait, 0 < 2)
    // pick a pair with both |dx|,|dy| >= 2 to be spared:
    size_t far = g.token_at(1, 1);
    CHECK(a(i, far) == b(i, far));
    size_t near = g.token_at(5, 4); // |dx|=1 gets pushed to 2
    CHECK(a(i, near) != b(i, near));
}
