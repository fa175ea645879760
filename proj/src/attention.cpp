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

#include "clearlab/attention.hpp"

#include <cmath>

namespace clearlab {

namespace {

double elu_plus_one(double x) { return x > 0.0 ? x + 1.0 : std::exp(x); }

double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

} // namespace

Matrix masked_attention(const AttentionInputs &in, const AttentionMask &mask) {
    CLEARLAB_CHECK(mask.n() == in.q.rows(), "masked_attention: mask size must match query count");
    CLEARLAB_CHECK(mask.n() == in.k.rows(), "masked_attention: self-attention mask expects m = n");
    for (size_t i = 0; i < mask.n(); ++i)
        CLEARLAB_CHECK(mask.row_popcount(i) > 0, "masked_attention: fully masked query row");
    Matrix scores = scale(matmul_nt(in.q, in.k), in.effective_scale());
    Matrix probs = softmax_rows(scores, mask.to_additive());
    return matmul(probs, in.v);
}

Matrix linear_attention(const AttentionInputs &in) {
    const size_t m = in.k.rows();
    CLEARLAB_CHECK(m == in.v.rows(), "linear_attention: K/V row mismatch");
    Matrix phi_q = in.q, phi_k = in.k;
    for (auto &x : phi_q.data()) x = elu_plus_one(x);
    for (auto &x : phi_k.data()) x = elu_plus_one(x);

    // c x c' right product and the key-feature sum; O(n c^2), never n x m.
    Matrix kv = matmul_tn(phi_k, in.v);
    std::vector<double> ksum(in.k.cols(), 0.0);
    for (size_t j = 0; j < m; ++j)
        for (size_t c = 0; c < in.k.cols(); ++c) ksum[c] += phi_k(j, c);

    Matrix numer = matmul(phi_q, kv);
    Matrix out(in.q.rows(), in.v.cols());
    for (size_t i = 0; i < in.q.rows(); ++i) {
        double denom = 0.0;
        for (size_t c = 0; c < in.q.cols(); ++c) denom += phi_q(i, c) * ksum[c];
        for (size_t c = 0; c < in.v.cols(); ++c) out(i, c) = numer(i, c) / denom;
    }
    return out;
}

Matrix sigmoid_attention(const AttentionInputs &in, std::optional<double> b) {
    const double bias = b ? *b : -std::log(double(in.k.rows()));
    Matrix scores = scale(matmul_nt(in.q, in.k), in.effective_scale());
    for (auto &s : scores.data()) s = sigmoid(s + bias);
    return matmul(scores, in.v);
}

KvCompressorParams KvCompressorParams::average_pool_init(size_t channels) {
    KvCompressorParams p;
    p.channels = channels;
    p.k_weights.assign(channels * 16, 1.0 / 16.0);
    p.v_weights.assign(channels * 16, 1.0 / 16.0);
    return p;
}

namespace {

/// Conv 4x4 stride 4 over the image-token block of `tokens`, one kernel per
/// channel, zero padding up to multiples of 4. Returns the compressed image
/// tokens; windows that cover only padding are dropped.
Matrix downsample_conv4(const Matrix &tokens, const TokenGrid &grid,
                        const std::vector<double> &weights) {
    const size_t c = tokens.cols();
    CLEARLAB_CHECK(weights.size() == c * 16, "compressor weights must be channels x 16");
    const size_t hp = (grid.height + 3) / 4, wp = (grid.width + 3) / 4;
    Matrix out(hp * wp, c);
    size_t row = 0;
    for (size_t by = 0; by < hp; ++by) {
        for (size_t bx = 0; bx < wp; ++bx, ++row) {
            for (size_t ky = 0; ky < 4; ++ky) {
                const size_t y = by * 4 + ky;
                if (y >= grid.height) continue;
                for (size_t kx = 0; kx < 4; ++kx) {
                    const size_t x = bx * 4 + kx;
                    if (x >= grid.width) continue;
                    const double *tok = tokens.row_ptr(grid.token_at(int64_t(x), int64_t(y)) -
                                                       grid.n_text);
                    for (size_t ch = 0; ch < c; ++ch)
                        out(row, ch) += weights[ch * 16 + ky * 4 + kx] * tok[ch];
                }
            }
        }
    }
    return out; // every 4x4 block contains at least one real token (hp, wp are ceils)
}

} // namespace

Matrix kv_compressed_attention(const AttentionInputs &in, const KvCompressorParams &params) {
    const TokenGrid &g = in.grid;
    CLEARLAB_CHECK(in.k.rows() == g.n_total() && in.v.rows() == g.n_total(),
                   "kv_compressed_attention: K/V must cover the grid");
    CLEARLAB_CHECK(params.channels == in.k.cols(), "compressor channel mismatch");

    Matrix k_img = in.k.slice_rows(g.n_text, g.n_total());
    Matrix v_img = in.v.slice_rows(g.n_text, g.n_total());
    Matrix k_down = downsample_conv4(k_img, g, params.k_weights);
    Matrix v_down = downsample_conv4(v_img, g, params.v_weights);

    Matrix k_all = concat_rows(in.k.slice_rows(0, g.n_text), k_down);
    Matrix v_all = concat_rows(in.v.slice_rows(0, g.n_text), v_down);
    Matrix scores = scale(matmul_nt(in.q, k_all), in.effective_scale());
    return matmul(softmax_rows(scores), v_all);
}

namespace {

/// Average-pool the image rows of a token matrix by `factor` per axis;
/// text rows pass through unchanged (they stay their own agents).
Matrix pool_queries(const Matrix &q, const TokenGrid &grid, size_t factor) {
    CLEARLAB_CHECK(grid.height % factor == 0 && grid.width % factor == 0,
                   "agent down factor must divide H and W");
    const size_t ph = grid.height / factor, pw = grid.width / factor;
    Matrix pooled(grid.n_text + ph * pw, q.cols());
    for (size_t t = 0; t < grid.n_text; ++t)
        std::copy(q.row_ptr(t), q.row_ptr(t) + q.cols(), pooled.row_ptr(t));
    const double inv = 1.0 / double(factor * factor);
    for (size_t py = 0; py < ph; ++py) {
        for (size_t px = 0; px < pw; ++px) {
            double *dst = pooled.row_ptr(grid.n_text + py * pw + px);
            for (size_t oy = 0; oy < factor; ++oy)
                for (size_t ox = 0; ox < factor; ++ox) {
                    const size_t tok = grid.token_at(int64_t(px * factor + ox),
                                                     int64_t(py * factor + oy));
                    const double *src = q.row_ptr(tok);
                    for (size_t c = 0; c < q.cols(); ++c) dst[c] += src[c] * inv;
                }
        }
    }
    return pooled;
}

} // namespace

Matrix agent_attention(const AttentionInputs &in, size_t down_factor) {
    CLEARLAB_CHECK(down_factor >= 1, "down_factor must be >= 1");
    CLEARLAB_CHECK(in.q.rows() == in.grid.n_total(), "agent_attention: Q must cover the grid");
    Matrix agents = pool_queries(in.q, in.grid, down_factor);
    const double s = in.effective_scale();
    Matrix aggregated = matmul(softmax_rows(scale(matmul_nt(agents, in.k), s)), in.v);
    Matrix weights = softmax_rows(scale(matmul_nt(in.q, agents), s));
    return matmul(weights, aggregated);
}

AttentionInputs random_attention_inputs(const TokenGrid &grid, size_t c, uint64_t seed) {
    Rng rng(seed);
    AttentionInputs in;
    in.q = Matrix::random_normal(grid.n_total(), c, rng);
    in.k = Matrix::random_normal(grid.n_total(), c, rng);
    in.v = Matrix::random_normal(grid.n_total(), c, rng);
    in.grid = grid;
    return in;
}

Matrix slot_attention(const AttentionInputs &in, const Matrix &slots) {
    CLEARLAB_CHECK(slots.rows() >= 1, "need at least one slot");
    CLEARLAB_CHECK(slots.cols() == in.k.cols(), "slot width must match key width");
    const double s = in.effective_scale();
    // Writing weights address the keys (X := K).
    Matrix write = softmax_rows(scale(matmul_nt(slots, in.k), s));
    Matrix k_slots = matmul(write, in.k);
    Matrix v_slots = matmul(write, in.v);
    return matmul(softmax_rows(scale(matmul_nt(in.q, k_slots), s)), v_slots);
}

} // namespace clearlab
