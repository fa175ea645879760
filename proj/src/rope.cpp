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

#include "clearlab/rope.hpp"

#include <cmath>

namespace clearlab {

double RopeConfig::freq(size_t t) const {
    return std::pow(base * ntk_factor, -2.0 * double(t) / double(axis_dim()));
}

Matrix rope_apply(const Matrix &q_or_k, const TokenGrid &grid, const RopeConfig &cfg) {
    CLEARLAB_CHECK(q_or_k.cols() == cfg.head_dim, "rope_apply: vector width must equal head_dim");
    CLEARLAB_CHECK(q_or_k.rows() == grid.n_total(), "rope_apply: one row per grid token");
    CLEARLAB_CHECK(cfg.clip.kind == ClipKind::None,
                   "rope_apply: clipping is a pairwise-score perturbation, not a per-token one");

    Matrix out = q_or_k;
    const size_t ppa = cfg.pairs_per_axis();
    for (size_t tok = grid.n_text; tok < grid.n_total(); ++tok) {
        const double pos[2] = {double(grid.x_of(tok)), double(grid.y_of(tok))};
        double *row = out.row_ptr(tok);
        for (size_t axis = 0; axis < 2; ++axis) {
            double *ax = row + axis * cfg.axis_dim();
            for (size_t t = 0; t < ppa; ++t) {
                const double ang = pos[axis] * cfg.freq(t);
                const double c = std::cos(ang), s = std::sin(ang);
                const double u = ax[2 * t], v = ax[2 * t + 1];
                ax[2 * t] = u * c - v * s;
                ax[2 * t + 1] = u * s + v * c;
            }
        }
    }
    return out;
}

double rope_pair_score(const double *q, const double *k, const RopeConfig &cfg, double dx,
                       double dy) {
    // q . R(p_j - p_i) k with (dx, dy) = p_i - p_j, i.e. rotate k by the
    // negated offset.
    const size_t ppa = cfg.pairs_per_axis();
    const double off[2] = {-dx, -dy};
    double score = 0.0;
    for (size_t axis = 0; axis < 2; ++axis) {
        const double *qa = q + axis * cfg.axis_dim();
        const double *ka = k + axis * cfg.axis_dim();
        for (size_t t = 0; t < ppa; ++t) {
            const double ang = off[axis] * cfg.freq(t);
            const double c = std::cos(ang), s = std::sin(ang);
            const double ku = ka[2 * t] * c - ka[2 * t + 1] * s;
            const double kv = ka[2 * t] * s + ka[2 * t + 1] * c;
            score += qa[2 * t] * ku + qa[2 * t + 1] * kv;
        }
    }
    return score;
}

Matrix rope_pairwise_scores(const Matrix &q, const Matrix &k, const TokenGrid &grid,
                            const RopeConfig &cfg) {
    CLEARLAB_CHECK(q.cols() == cfg.head_dim && k.cols() == cfg.head_dim,
                   "rope_pairwise_scores: vector width must equal head_dim");
    CLEARLAB_CHECK(q.rows() == grid.n_total() && k.rows() == grid.n_total(),
                   "rope_pairwise_scores: one row per grid token");
    const size_t n = grid.n_total();
    Matrix scores(n, n);
    for (size_t i = 0; i < n; ++i) {
        const bool ti = grid.is_text(i);
        const double xi = ti ? 0.0 : double(grid.x_of(i));
        const double yi = ti ? 0.0 : double(grid.y_of(i));
        for (size_t j = 0; j < n; ++j) {
            const bool tj = grid.is_text(j);
            double dx = xi - (tj ? 0.0 : double(grid.x_of(j)));
            double dy = yi - (tj ? 0.0 : double(grid.y_of(j)));
            if (!ti && !tj) {
                dx = clip_offset(dx, cfg.clip);
                dy = clip_offset(dy, cfg.clip);
            }
            scores(i, j) = rope_pair_score(q.row_ptr(i), k.row_ptr(j), cfg, dx, dy);
        }
    }
    return scores;
}

std::vector<double> rope_angles(const TokenGrid &grid, const RopeConfig &cfg) {
    const size_t ppa = cfg.pairs_per_axis();
    const size_t pairs = 2 * ppa;
    std::vector<double> angles(grid.n_total() * pairs, 0.0);
    for (size_t tok = grid.n_text; tok < grid.n_total(); ++tok) {
        const double pos[2] = {double(grid.x_of(tok)), double(grid.y_of(tok))};
        double *a = angles.data() + tok * pairs;
        for (size_t axis = 0; axis < 2; ++axis)
            for (size_t t = 0; t < ppa; ++t) a[axis * ppa + t] = pos[axis] * cfg.freq(t);
    }
    return angles;
}

} // namespace clearlab
