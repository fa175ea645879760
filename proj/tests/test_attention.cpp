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

#include "clearlab/attention.hpp"

using namespace clearlab;

namespace {

/// Independent dense oracle: explicit per-row exp/normalize, no shared code
/// with softmax_rows (no max-subtraction trick either; inputs stay small).
Matrix dense_attention_oracle(const Matrix &q, const Matrix &k, const Matrix &v, double s,
                              const AttentionMask *mask = nullptr) {
    Matrix out(q.rows(), v.cols());
    for (size_t i = 0; i < q.rows(); ++i) {
        std::vector<double> w(k.rows(), 0.0);
        double z = 0.0;
        for (size_t j = 0; j < k.rows(); ++j) {
            if (mask && !mask->get(i, j)) continue;
            double dot = 0.0;
            for (size_t c = 0; c < q.cols(); ++c) dot += q(i, c) * k(j, c);
            w[j] = std::exp(dot * s);
            z += w[j];
        }
        for (size_t j = 0; j < k.rows(); ++j)
            for (size_t c = 0; c < v.cols(); ++c) out(i, c) += (w[j] / z) * v(j, c);
    }
    return out;
}

AttentionInputs random_inputs(const TokenGrid &g, size_t c, uint64_t seed) {
    Rng rng(seed);
    AttentionInputs in;
    in.q = Matrix::random_normal(g.n_total(), c, rng);
    in.k = Matrix::random_normal(g.n_total(), c, rng);
    in.v = Matrix::random_normal(g.n_total(), c, rng);
    in.grid = g;
    return in;
}

double rel_err(const Matrix &got, const Matrix &want) {
    double num = 0.0, den = 1e-300;
    for (size_t i = 0; i < got.size(); ++i) {
        num = std::max(num, std::fabs(got.data()[i] - want.data()[i]));
        den = std::max(den, std::fabs(want.data()[i]));
    }
    return num / den;
}

} // namespace

TEST_CASE("masked attention trivial cases") {
    TokenGrid g(1, 1, 1); // degenerate 2-token sequence
    AttentionInputs in = random_inputs(g, 4, 1);

    // n=m=1 with mask [[1]]: output equals V
    TokenGrid one(0, 1, 1);
    AttentionInputs single = random_inputs(one, 4, 2);
    Matrix o = masked_attention(single, build_full(one));
    CHECK(max_abs_diff(o, single.v) < 1e-14);

    // identity mask: O_i = V_i
    TokenGrid g2(0, 2, 2);
    AttentionInputs in2 = random_inputs(g2, 4, 3);
    Matrix id = masked_attention(in2, build_neighborhood(g2, 0));
    CHECK(max_abs_diff(id, in2.v) < 1e-12);
}

TEST_CASE("masked attention matches the independent dense oracle") {
    TokenGrid g(4, 4, 5); // n = 24
    AttentionInputs in = random_inputs(g, 8, 5);
    AttentionMask full = build_full(g);
    Matrix got = masked_attention(in, full);
    Matrix want = dense_attention_oracle(in.q, in.k, in.v, in.effective_scale());
    CHECK(rel_err(got, want) < 1e-10);
}

TEST_CASE("masked attention equals dense attention restricted to unmasked keys") {
    TokenGrid g(2, 4, 4);
    AttentionInputs in = random_inputs(g, 8, 6);
    AttentionMask m = build_clear(g, 2.0);
    Matrix got = masked_attention(in, m);
    Matrix want = dense_attention_oracle(in.q, in.k, in.v, in.effective_scale(), &m);
    CHECK(rel_err(got, want) < 1e-10);
}

TEST_CASE("clear mask with covering radius equals full-mask attention") {
    TokenGrid g(2, 4, 4);
    AttentionInputs in = random_inputs(g, 8, 7);
    Matrix full = masked_attention(in, build_full(g));
    Matrix covered = masked_attention(in, build_clear(g, 10.0)); // > grid diagonal
    CHECK(rel_err(covered, full) < 1e-12);
}

TEST_CASE("attention weight rows are stochastic and permutation-consistent") {
    TokenGrid g(1, 3, 3);
    AttentionInputs in = random_inputs(g, 8, 8);
    AttentionMask m = build_clear(g, 2.0);

    // row-stochasticity through the probs: recompute explicitly
    Matrix scores = scale(matmul_nt(in.q, in.k), in.effective_scale());
    Matrix probs = softmax_rows(scores, m.to_additive());
    for (size_t i = 0; i < probs.rows(); ++i) {
        double s = 0.0;
        for (size_t j = 0; j < probs.cols(); ++j) s += probs(i, j);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }

    // permuting keys/values together with a consistently permuted mask
    // leaves the output unchanged. Reverse the key order:
    const size_t n = g.n_total();
    AttentionInputs rev = in;
    for (size_t j = 0; j < n; ++j) {
        for (size_t c = 0; c < in.k.cols(); ++c) {
            rev.k(j, c) = in.k(n - 1 - j, c);
            rev.v(j, c) = in.v(n - 1 - j, c);
        }
    }
    Matrix base = masked_attention(in, m);
    // permuted mask: same grid geometry reversed; evaluate via the oracle
    Matrix scores_rev = scale(matmul_nt(rev.q, rev.k), in.effective_scale());
    Matrix addm(n, n);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j)
            if (!m.get(i, n - 1 - j)) addm(i, j) = neg_infinity();
    Matrix out_rev = matmul(softmax_rows(scores_rev, addm), rev.v);
    CHECK(rel_err(out_rev, base) < 1e-12);
}

TEST_CASE("linear attention trivial and oracle cases") {
    TokenGrid g(0, 2, 3);
    AttentionInputs in = random_inputs(g, 5, 9);

    // single key: every output row equals V's single row
    AttentionInputs one = in;
    one.k = in.k.slice_rows(0, 1);
    one.v = in.v.slice_rows(0, 1);
    Matrix o1 = linear_attention(one);
    for (size_t i = 0; i < o1.rows(); ++i)
        for (size_t c = 0; c < o1.cols(); ++c)
            CHECK(o1(i, c) == doctest::Approx(one.v(0, c)).epsilon(1e-12));

    // identical keys: output is the column mean of V
    AttentionInputs same = in;
    for (size_t j = 1; j < same.k.rows(); ++j)
        for (size_t c = 0; c < same.k.cols(); ++c) same.k(j, c) = same.k(0, c);
    Matrix o2 = linear_attention(same);
    for (size_t c = 0; c < same.v.cols(); ++c) {
        double mean = 0.0;
        for (size_t j = 0; j < same.v.rows(); ++j) mean += same.v(j, c);
        mean /= double(same.v.rows());
        for (size_t i = 0; i < o2.rows(); ++i)
            CHECK(o2(i, c) == doctest::Approx(mean).epsilon(1e-10));
    }

    // explicit n x m normalized-similarity oracle
    auto phi = [](double x) { return x > 0.0 ? x + 1.0 : std::exp(x); };
    Matrix want(in.q.rows(), in.v.cols());
    for (size_t i = 0; i < in.q.rows(); ++i) {
        std::vector<double> sim(in.k.rows());
        double z = 0.0;
        for (size_t j = 0; j < in.k.rows(); ++j) {
            double s = 0.0;
            for (size_t c = 0; c < in.q.cols(); ++c) s += phi(in.q(i, c)) * phi(in.k(j, c));
            sim[j] = s;
            z += s;
        }
        for (size_t j = 0; j < in.k.rows(); ++j)
            for (size_t c = 0; c < in.v.cols(); ++c) want(i, c) += (sim[j] / z) * in.v(j, c);
    }
    CHECK(rel_err(linear_attention(in), want) < 1e-10);

    // convexity: weights positive and summing to one means outputs stay
    // inside the per-column hull of V
    Matrix got = linear_attention(in);
    for (size_t c = 0; c < in.v.cols(); ++c) {
        double lo = in.v(0, c), hi = in.v(0, c);
        for (size_t j = 1; j < in.v.rows(); ++j) {
            lo = std::min(lo, in.v(j, c));
            hi = std::max(hi, in.v(j, c));
        }
        for (size_t i = 0; i < got.rows(); ++i) {
            CHECK(got(i, c) >= lo - 1e-12);
            CHECK(got(i, c) <= hi + 1e-12);
        }
    }
}

TEST_CASE("sigmoid attention") {
    TokenGrid g(0, 2, 2);
    AttentionInputs in = random_inputs(g, 4, 10);

    // zero scores with b=0: output is half the column sums of V
    AttentionInputs zq = in;
    for (auto &x : zq.q.data()) x = 0.0;
    Matrix o = sigmoid_attention(zq, 0.0);
    for (size_t c = 0; c < in.v.cols(); ++c) {
        double colsum = 0.0;
        for (size_t j = 0; j < in.v.rows(); ++j) colsum += in.v(j, c);
        for (size_t i = 0; i < o.rows(); ++i)
            CHECK(o(i, c) == doctest::Approx(0.5 * colsum).epsilon(1e-12));
    }

    // very negative bias drives the output to zero
    Matrix tiny = sigmoid_attention(in, -60.0);
    for (double x : tiny.data()) CHECK(std::fabs(x) < 1e-20);

    // direct elementwise evaluation
    const double s = in.effective_scale(), b = -std::log(double(in.k.rows()));
    Matrix want(in.q.rows(), in.v.cols());
    for (size_t i = 0; i < in.q.rows(); ++i)
        for (size_t j = 0; j < in.k.rows(); ++j) {
            double dot = 0.0;
            for (size_t c = 0; c < in.q.cols(); ++c) dot += in.q(i, c) * in.k(j, c);
            double wgt = 1.0 / (1.0 + std::exp(-(dot * s + b)));
            for (size_t c = 0; c < in.v.cols(); ++c) want(i, c) += wgt * in.v(j, c);
        }
    CHECK(rel_err(sigmoid_attention(in), want) < 1e-12);
}

TEST_CASE("kv compression") {
    // constant V map stays constant under average pooling
    TokenGrid g(1, 4, 4);
    AttentionInputs in = random_inputs(g, 4, 11);
    for (size_t j = g.n_text; j < g.n_total(); ++j)
        for (size_t c = 0; c < 4; ++c) in.v(j, c) = 7.5;
    auto params = KvCompressorParams::average_pool_init(4);
    Matrix o = kv_compressed_attention(in, params);
    CHECK(o.rows() == g.n_total());

    // a 4x4 map with values 1..16 compresses to its mean 8.5
    TokenGrid g2(0, 4, 4);
    AttentionInputs in2 = random_inputs(g2, 1, 12);
    for (size_t j = 0; j < 16; ++j) in2.v(j, 0) = double(j + 1);
    // single compressed key: all queries see exactly it
    Matrix o2 = kv_compressed_attention(in2, KvCompressorParams::average_pool_init(1));
    for (size_t i = 0; i < o2.rows(); ++i) CHECK(o2(i, 0) == doctest::Approx(8.5).epsilon(1e-12));

    // key count arithmetic: exposed indirectly through a 8x4 grid where
    // compression collapses image keys 8x
    TokenGrid g3(2, 8, 4);
    AttentionInputs in3 = random_inputs(g3, 4, 13);
    // identical V rows expose the weight structure; just shape-check here
    Matrix o3 = kv_compressed_attention(in3, KvCompressorParams::average_pool_init(4));
    CHECK(o3.rows() == g3.n_total());
    CHECK(o3.cols() == 4);
}

TEST_CASE("kv compression pads non-multiple-of-4 grids") {
    TokenGrid g(1, 5, 6);
    AttentionInputs in = random_inputs(g, 4, 14);
    Matrix o = kv_compressed_attention(in, KvCompressorParams::average_pool_init(4));
    CHECK(o.rows() == g.n_total());
    CHECK(o.all_finite());
}

TEST_CASE("agent attention") {
    TokenGrid g(0, 4, 4);
    AttentionInputs in = random_inputs(g, 8, 15);

    // one agent (full pooling, no text): every row equals that agent's aggregate
    Matrix o1 = agent_attention(in, 4);
    for (size_t i = 1; i < o1.rows(); ++i)
        for (size_t c = 0; c < o1.cols(); ++c)
            CHECK(o1(i, c) == doctest::Approx(o1(0, c)).epsilon(1e-12));

    // down_factor 1 on a text-free grid: agents are Q itself
    Matrix o2 = agent_attention(in, 1);
    const double s = in.effective_scale();
    Matrix a = matmul(softmax_rows(scale(matmul_nt(in.q, in.k), s)), in.v);
    Matrix want = matmul(softmax_rows(scale(matmul_nt(in.q, in.q), s)), a);
    CHECK(rel_err(o2, want) < 1e-12);

    // staged oracle with text tokens and pooling
    TokenGrid g2(2, 4, 4);
    AttentionInputs in2 = random_inputs(g2, 8, 16);
    Matrix got = agent_attention(in2, 2);
    // build agents explicitly: text rows + 2x2 average pooled image rows
    Matrix agents(2 + 4, 8);
    for (size_t t = 0; t < 2; ++t)
        for (size_t c = 0; c < 8; ++c) agents(t, c) = in2.q(t, c);
    for (size_t py = 0; py < 2; ++py)
        for (size_t px = 0; px < 2; ++px)
            for (size_t oy = 0; oy < 2; ++oy)
                for (size_t ox = 0; ox < 2; ++ox) {
                    size_t tok = g2.token_at(int64_t(px * 2 + ox), int64_t(py * 2 + oy));
                    for (size_t c = 0; c < 8; ++c)
                        agents(2 + py * 2 + px, c) += 0.25 * in2.q(tok, c);
                }
    Matrix agg = matmul(softmax_rows(scale(matmul_nt(agents, in2.k), s)), in2.v);
    Matrix w2 = softmax_rows(scale(matmul_nt(in2.q, agents), s));
    CHECK(rel_err(got, matmul(w2, agg)) < 1e-10);
}

TEST_CASE("slot attention") {
    TokenGrid g(0, 2, 3);
    AttentionInputs in = random_inputs(g, 6, 17);
    Rng rng(18);

    // s=1: all output rows equal the single slot value
    Matrix p1 = Matrix::random_normal(1, 6, rng);
    Matrix o1 = slot_attention(in, p1);
    for (size_t i = 1; i < o1.rows(); ++i)
        for (size_t c = 0; c < o1.cols(); ++c)
            CHECK(o1(i, c) == doctest::Approx(o1(0, c)).epsilon(1e-12));

    // orthogonal slot: uniform averages of K and V
    Matrix zero_slot(1, 6); // zero scores against every key
    Matrix o2 = slot_attention(in, zero_slot);
    Matrix vbar(1, 6);
    for (size_t j = 0; j < in.v.rows(); ++j)
        for (size_t c = 0; c < 6; ++c) vbar(0, c) += in.v(j, c) / double(in.v.rows());
    for (size_t i = 0; i < o2.rows(); ++i)
        for (size_t c = 0; c < 6; ++c) CHECK(o2(i, c) == doctest::Approx(vbar(0, c)).epsilon(1e-10));

    // staged dense oracle for s=3
    Matrix slots = Matrix::random_normal(3, 6, rng);
    const double s = in.effective_scale();
    Matrix write = softmax_rows(scale(matmul_nt(slots, in.k), s));
    Matrix want = matmul(softmax_rows(scale(matmul_nt(in.q, matmul(write, in.k)), s)),
                         matmul(write, in.v));
    CHECK(rel_err(slot_attention(in, slots), want) < 1e-12);
}

TEST_CASE("masked attention errors") {
    TokenGrid g(0, 2, 2);
    AttentionInputs in = random_inputs(g, 4, 19);
    AttentionMask wrong = build_full(TokenGrid(0, 3, 3));
    CHECK_THROWS_AS(masked_attention(in, wrong), CheckError);
}
