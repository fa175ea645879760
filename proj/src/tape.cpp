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

#include "clearlab/tape.hpp"

#include <cmath>

namespace clearlab {

namespace {

double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

void accumulate(Matrix &dst, const Matrix &src) {
    if (dst.empty()) {
        dst = src;
        return;
    }
    for (size_t i = 0; i < dst.size(); ++i) dst.data()[i] += src.data()[i];
}

} // namespace

Matrix rotate_pairs(const Matrix &x, const std::vector<double> &angles, bool inverse) {
    const size_t pairs = x.cols() / 2;
    CLEARLAB_CHECK(x.cols() % 2 == 0, "rotate_pairs: even width required");
    CLEARLAB_CHECK(angles.size() == x.rows() * pairs, "rotate_pairs: angle table shape");
    Matrix out = x;
    const double sign = inverse ? -1.0 : 1.0;
    for (size_t r = 0; r < x.rows(); ++r) {
        double *row = out.row_ptr(r);
        const double *a = angles.data() + r * pairs;
        for (size_t t = 0; t < pairs; ++t) {
            const double c = std::cos(a[t]), s = sign * std::sin(a[t]);
            const double u = row[2 * t], v = row[2 * t + 1];
            row[2 * t] = u * c - v * s;
            row[2 * t + 1] = u * s + v * c;
        }
    }
    return out;
}

Tape::NodeId Tape::input(Matrix value, bool trainable) {
    Node n;
    n.op = Op::Input;
    n.value = std::move(value);
    n.trainable = trainable;
    return push(std::move(n));
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
    Node n;
    n.op = Op::MatMul;
    n.a = a;
    n.b = b;
    n.value = clearlab::matmul(value(a), value(b));
    return push(std::move(n));
}

Tape::NodeId Tape::matmul_nt(NodeId a, NodeId b) {
    Node n;
    n.op = Op::MatMulNT;
    n.a = a;
    n.b = b;
    n.value = clearlab::matmul_nt(value(a), value(b));
    return push(std::move(n));
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
    Node n;
    n.op = Op::Add;
    n.a = a;
    n.b = b;
    n.value = clearlab::add(value(a), value(b));
    return push(std::move(n));
}

Tape::NodeId Tape::sub(NodeId a, NodeId b) {
    Node n;
    n.op = Op::Sub;
    n.a = a;
    n.b = b;
    n.value = clearlab::sub(value(a), value(b));
    return push(std::move(n));
}

Tape::NodeId Tape::scale(NodeId a, double s) {
    Node n;
    n.op = Op::Scale;
    n.a = a;
    n.scalar = s;
    n.value = clearlab::scale(value(a), s);
    return push(std::move(n));
}

Tape::NodeId Tape::add_row_broadcast(NodeId a, NodeId row) {
    const Matrix &base = value(a), &r = value(row);
    CLEARLAB_CHECK(r.rows() == 1 && r.cols() == base.cols(),
                   "add_row_broadcast: row must be 1 x cols");
    Node n;
    n.op = Op::AddRowBroadcast;
    n.a = a;
    n.b = row;
    n.value = base;
    for (size_t i = 0; i < base.rows(); ++i)
        for (size_t c = 0; c < base.cols(); ++c) n.value(i, c) += r(0, c);
    return push(std::move(n));
}

Tape::NodeId Tape::silu(NodeId a) {
    Node n;
    n.op = Op::Silu;
    n.a = a;
    n.value = value(a);
    for (auto &x : n.value.data()) x = x * sigmoid(x);
    return push(std::move(n));
}

Tape::NodeId Tape::masked_softmax(NodeId scores, std::shared_ptr<const AttentionMask> mask) {
    CLEARLAB_CHECK(mask != nullptr, "masked_softmax: null mask");
    const Matrix &s = value(scores);
    CLEARLAB_CHECK(s.rows() == mask->n() && s.cols() == mask->n(),
                   "masked_softmax: scores shape must match mask");
    Node n;
    n.op = Op::MaskedSoftmax;
    n.a = scores;
    n.mask = mask;
    n.value = softmax_rows(s, mask->to_additive());
    return push(std::move(n));
}

Tape::NodeId Tape::rope(NodeId a, std::shared_ptr<const std::vector<double>> angles) {
    CLEARLAB_CHECK(angles != nullptr, "rope: null angle table");
    Node n;
    n.op = Op::Rope;
    n.a = a;
    n.angles = angles;
    n.value = rotate_pairs(value(a), *angles, false);
    return push(std::move(n));
}

Tape::NodeId Tape::slice_cols(NodeId a, size_t c0, size_t c1) {
    Node n;
    n.op = Op::SliceCols;
    n.a = a;
    n.c0 = c0;
    n.c1 = c1;
    n.value = value(a).slice_cols(c0, c1);
    return push(std::move(n));
}

Tape::NodeId Tape::concat_cols(NodeId a, NodeId b) {
    Node n;
    n.op = Op::ConcatCols;
    n.a = a;
    n.b = b;
    n.value = clearlab::concat_cols(value(a), value(b));
    return push(std::move(n));
}

Tape::NodeId Tape::slice_rows(NodeId a, size_t r0, size_t r1) {
    Node n;
    n.op = Op::SliceRows;
    n.a = a;
    n.c0 = r0;
    n.c1 = r1;
    n.value = value(a).slice_rows(r0, r1);
    return push(std::move(n));
}

Tape::NodeId Tape::concat_rows(NodeId a, NodeId b) {
    Node n;
    n.op = Op::ConcatRows;
    n.a = a;
    n.b = b;
    n.value = clearlab::concat_rows(value(a), value(b));
    return push(std::move(n));
}

Tape::NodeId Tape::mean_sq_diff(NodeId a, NodeId b) {
    const Matrix &x = value(a), &y = value(b);
    CLEARLAB_CHECK(x.same_shape(y), "mean_sq_diff: shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        double d = x.data()[i] - y.data()[i];
        acc += d * d;
    }
    Node n;
    n.op = Op::MeanSqDiff;
    n.a = a;
    n.b = b;
    n.value = Matrix(1, 1, {acc / double(x.size())});
    return push(std::move(n));
}

void Tape::backward(NodeId loss) {
    Node &top = node(loss);
    CLEARLAB_CHECK(top.value.rows() == 1 && top.value.cols() == 1,
                   "backward: loss must be a 1x1 node");
    for (auto &n : nodes_) n.grad = Matrix();
    top.grad = Matrix(1, 1, {1.0});

    for (NodeId id = loss; id >= 0; --id) {
        Node &n = nodes_[size_t(id)];
        if (n.grad.empty()) continue;
        const Matrix &g = n.grad;
        switch (n.op) {
        case Op::Input:
            break;
        case Op::MatMul:
            accumulate(nodes_[size_t(n.a)].grad, clearlab::matmul_nt(g, value(n.b)));
            accumulate(nodes_[size_t(n.b)].grad, clearlab::matmul_tn(value(n.a), g));
            break;
        case Op::MatMulNT:
            accumulate(nodes_[size_t(n.a)].grad, clearlab::matmul(g, value(n.b)));
            accumulate(nodes_[size_t(n.b)].grad, clearlab::matmul_tn(g, value(n.a)));
            break;
        case Op::Add:
            accumulate(nodes_[size_t(n.a)].grad, g);
            accumulate(nodes_[size_t(n.b)].grad, g);
            break;
        case Op::Sub:
            accumulate(nodes_[size_t(n.a)].grad, g);
            accumulate(nodes_[size_t(n.b)].grad, clearlab::scale(g, -1.0));
            break;
        case Op::Scale:
            accumulate(nodes_[size_t(n.a)].grad, clearlab::scale(g, n.scalar));
            break;
        case Op::AddRowBroadcast: {
            accumulate(nodes_[size_t(n.a)].grad, g);
            Matrix rowg(1, g.cols());
            for (size_t r = 0; r < g.rows(); ++r)
                for (size_t c = 0; c < g.cols(); ++c) rowg(0, c) += g(r, c);
            accumulate(nodes_[size_t(n.b)].grad, rowg);
            break;
        }
        case Op::Silu: {
            const Matrix &x = value(n.a);
            Matrix dx = g;
            for (size_t i = 0; i < dx.size(); ++i) {
                double s = sigmoid(x.data()[i]);
                dx.data()[i] *= s * (1.0 + x.data()[i] * (1.0 - s));
            }
            accumulate(nodes_[size_t(n.a)].grad, dx);
            break;
        }
        case Op::MaskedSoftmax: {
            const Matrix &p = n.value;
            Matrix ds(p.rows(), p.cols());
            for (size_t r = 0; r < p.rows(); ++r) {
                double dot = 0.0;
                for (size_t c = 0; c < p.cols(); ++c) dot += g(r, c) * p(r, c);
                for (size_t c = 0; c < p.cols(); ++c) ds(r, c) = p(r, c) * (g(r, c) - dot);
            }
            accumulate(nodes_[size_t(n.a)].grad, ds);
            break;
        }
        case Op::Rope:
            accumulate(nodes_[size_t(n.a)].grad, rotate_pairs(g, *n.angles, true));
            break;
        case Op::SliceCols: {
            Matrix back(value(n.a).rows(), value(n.a).cols());
            for (size_t r = 0; r < g.rows(); ++r)
                for (size_t c = 0; c < g.cols(); ++c) back(r, n.c0 + c) = g(r, c);
            accumulate(nodes_[size_t(n.a)].grad, back);
            break;
        }
        case Op::ConcatCols:
            accumulate(nodes_[size_t(n.a)].grad, g.slice_cols(0, value(n.a).cols()));
            accumulate(nodes_[size_t(n.b)].grad, g.slice_cols(value(n.a).cols(), g.cols()));
            break;
        case Op::SliceRows: {
            Matrix back(value(n.a).rows(), value(n.a).cols());
            for (size_t r = 0; r < g.rows(); ++r)
                for (size_t c = 0; c < g.cols(); ++c) back(n.c0 + r, c) = g(r, c);
            accumulate(nodes_[size_t(n.a)].grad, back);
            break;
        }
        case Op::ConcatRows:
            accumulate(nodes_[size_t(n.a)].grad, g.slice_rows(0, value(n.a).rows()));
            accumulate(nodes_[size_t(n.b)].grad, g.slice_rows(value(n.a).rows(), g.rows()));
            break;
        case Op::MeanSqDiff: {
            const Matrix &x = value(n.a), &y = value(n.b);
            const double f = 2.0 * g(0, 0) / double(x.size());
            Matrix dx(x.rows(), x.cols());
            for (size_t i = 0; i < x.size(); ++i) dx.data()[i] = f * (x.data()[i] - y.data()[i]);
            accumulate(nodes_[size_t(n.a)].grad, dx);
            accumulate(nodes_[size_t(n.b)].grad, clearlab::scale(dx, -1.0));
            break;
        }
        }
    }

    // nodes the loss never reached report zero gradients of their own shape
    for (auto &n : nodes_)
        if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
}

const Matrix &Tape::grad(NodeId id) const {
    const Node &n = node(id);
    CLEARLAB_CHECK(!n.grad.empty(), "grad requested before backward()");
    return n.grad;
}

void Tape::clear() { nodes_.clear(); }

} // namespace clearlab
