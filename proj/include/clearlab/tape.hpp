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

#include <memory>
#include <vector>

#include "clearlab/mask.hpp"
#include "clearlab/matrix.hpp"

namespace clearlab {

/// Reverse-mode tape over matrix-valued nodes, covering exactly the op set
/// the toy transformer needs. Build a forward graph, call backward() on a
/// 1x1 loss node, read gradients off any node. Single-threaded per tape.
class Tape {
public:
    using NodeId = int;

    enum class Op : uint8_t {
        Input,
        MatMul,          // a * b
        MatMulNT,        // a * b^T
        Add,
        Sub,
        Scale,           // a * s
        AddRowBroadcast, // a + ones * row
        Silu,
        MaskedSoftmax,   // row softmax with -inf holes from an AttentionMask
        Rope,            // per-token pair rotations by fixed angles
        SliceCols,
        ConcatCols,
        SliceRows,
        ConcatRows,
        MeanSqDiff,      // mean((a-b)^2) -> 1x1
    };

    NodeId input(Matrix value, bool trainable = false);
    NodeId matmul(NodeId a, NodeId b);
    NodeId matmul_nt(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId scale(NodeId a, double s);
    NodeId add_row_broadcast(NodeId a, NodeId row);
    NodeId silu(NodeId a);
    NodeId masked_softmax(NodeId scores, std::shared_ptr<const AttentionMask> mask);
    /// angles laid out as rope_angles(): one row of head_dim/2 angles per
    /// token, x-axis pairs first.
    NodeId rope(NodeId a, std::shared_ptr<const std::vector<double>> angles);
    NodeId slice_cols(NodeId a, size_t c0, size_t c1);
    NodeId concat_cols(NodeId a, NodeId b);
    NodeId slice_rows(NodeId a, size_t r0, size_t r1);
    NodeId concat_rows(NodeId a, NodeId b);
    NodeId mean_sq_diff(NodeId a, NodeId b);

    const Matrix &value(NodeId id) const { return node(id).value; }
    bool trainable(NodeId id) const { return node(id).trainable; }
    size_t size() const { return nodes_.size(); }

    /// Reverse sweep from a scalar loss node. Gradients of earlier
    /// backward() calls are discarded.
    void backward(NodeId loss);

    /// Gradient after backward(); zero matrix for nodes the loss does not
    /// reach. Throws for ids not on the tape.
    const Matrix &grad(NodeId id) const;

    void clear();

private:
    struct Node {
        Op op = Op::Input;
        NodeId a = -1;
        NodeId b = -1;
        Matrix value;
        Matrix grad;
        bool trainable = false;
        double scalar = 0.0;
        size_t c0 = 0, c1 = 0;
        std::shared_ptr<const AttentionMask> mask;
        std::shared_ptr<const std::vector<double>> angles;
    };

    const Node &node(NodeId id) const {
        CLEARLAB_CHECK(id >= 0 && size_t(id) < nodes_.size(), "node id not on tape");
        return nodes_[size_t(id)];
    }
    Node &node(NodeId id) {
        CLEARLAB_CHECK(id >= 0 && size_t(id) < nodes_.size(), "node id not on tape");
        return nodes_[size_t(id)];
    }
    NodeId push(Node n) {
        nodes_.push_back(std::move(n));
        return NodeId(nodes_.size() - 1);
    }

    std::vector<Node> nodes_;
};

/// Forward/backward of the pair-rotation op shared with rope_apply's
/// conventions (axis halves, consecutive pairs).
Matrix rotate_pairs(const Matrix &x, const std::vector<double> &angles, bool inverse);

} // namespace clearlab
