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

#include "clearlab/flops.hpp"

using namespace clearlab;

TEST_CASE("flops of empty and full masks") {
    TokenGrid g(2, 3, 3);
    CHECK(flops_of_popcount(0, 3072) == 0);
    AttentionMask full = build_full(g);
    CHECK(flops_of_mask(full, 10) == 4ull * 11 * 11 * 10);
}

TEST_CASE("analytic popcounts equal materialized masks") {
    struct Case {
        size_t nt, h, w;
    };
    for (const Case &k : {Case{0, 5, 7}, Case{3, 8, 8}, Case{16, 12, 9}}) {
        TokenGrid g(k.nt, k.h, k.w);
        CHECK(full_popcount(g) == build_full(g).popcount());
        for (double r : {1.0, 2.0, 2.5, 4.0, 100.0}) {
            CHECK(clear_popcount(g, r) == build_clear(g, r).popcount());
        }
    }
}

TEST_CASE("published table: 1024^2 column") {
    FluxConfig flux;
    TokenGrid g = flux.grid_for(1024);
    CHECK(g.n_total() == 4608);

    // full attention: 4 n^2 c, exact
    CHECK(flops_of_popcount(full_popcount(g), flux.feature_dim) == 260919263232ull);

    // clear r=8 lands on the published 63.5 GFLOPS within 1%
    double gf = double(flops_of_popcount(clear_popcount(g, 8.0), flux.feature_dim)) / 1e9;
    CHECK(gf == doctest::Approx(63.5).epsilon(0.01));
}

TEST_CASE("flux cost table rows and reduction") {
    FluxConfig flux;
    CostReport rep = flux_cost_table(flux, {1024, 8192}, {8.0});
    const CostRow *full_8k = rep.find("full", 8192, 0.0);
    REQUIRE(full_8k != nullptr);
    CHECK(full_8k->n_tokens == 262656);
    CHECK(double(full_8k->flops) / 1e12 == doctest::Approx(847.73).epsilon(0.005));

    const CostRow *clear_8k = rep.find("clear", 8192, 8.0);
    REQUIRE(clear_8k != nullptr);
    CHECK(double(clear_8k->flops) / 1e12 == doctest::Approx(3.92).epsilon(0.05));

    CHECK(rep.reduction(8192, 8.0) >= 0.995);
}

TEST_CASE("clear flops grow linearly in image token count") {
    FluxConfig flux;
    for (int64_t h : {64, 128, 256}) {
        TokenGrid g1(flux.n_text, size_t(h), 64);
        TokenGrid g2(flux.n_text, size_t(2 * h), 64);
        // image-image popcount only (subtract text contributions)
        auto img = [&](const TokenGrid &g) {
            return clear_popcount(g, 8.0) - flux.n_text * g.n_total() -
                   g.n_image() * flux.n_text;
        };
        double factor = double(img(g2)) / double(img(g1));
        CHECK(factor > 1.9);
        CHECK(factor < 2.1);
    }
}

TEST_CASE("circle/square overhead") {
    TokenGrid small(0, 4, 4);
    CHECK(circle_square_overhead(small, 1) == doctest::Approx(5.0 / 9.0));

    TokenGrid big(0, 130, 130);
    double r32 = circle_square_overhead(big, 32);
    CHECK(r32 > 0.72);
    CHECK(r32 < 0.82);

    // trends toward pi/4 as r grows
    TokenGrid huge(0, 260, 260);
    double r64 = circle_square_overhead(huge, 64);
    CHECK(std::fabs(r64 - 0.7853981634) < std::fabs(r32 - 0.7853981634));

    CHECK_THROWS_AS(circle_square_overhead(small, 2), CheckError); // needs H,W >= 4r
}
