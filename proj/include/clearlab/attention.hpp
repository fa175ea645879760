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

#include <cmath>
#include <optional>

#include "clearlab/mask.hpp"
#include "clearlab/matrix.hpp"

namespace clearlab {

/// One call signature for the whole attention taxonomy. The grid lets
/// pattern-based methods map tokens to 2D; sequence-only methods ignore it.
struct AttentionInputs {
    Matrix q; // n x c
    Matrix k; // m x c
    Matrix v; // m x c'
    TokenGrid grid;
    std::optional<double> scale; // default 1/sqrt(c)

    double effective_scale() const {
        return scale ? *scale : 1.0 / std::sqrt(double(q.cols()));
    }
};

/// Exact masked scaled-dot-product attention. Masked-out logits become
/// -inf before the softmax. A fully masked query row is an error (every
/// builder in this library keeps the diagonal, so it cannot happen with
/// self-attention masks built here).
Matrix masked_attention(const AttentionInputs &in, const AttentionMask &mask);

/// Kernelized linear attention with phi = elu + 1 and row normalization,
/// computed through the c x c right product -- the n x m similarity matrix
/// is never materialized.
Matrix linear_attention(const AttentionInputs &in);

/// sigmoid(QK^T * scale + b) V; no row normalization. Default bias
/// b = -ln(m) keeps total attention mass O(1) in the key count.
Matrix sigmoid_attention(const AttentionInputs &in, std::optional<double> b = std::nullopt);

/// Group-wise 4x4 stride-4 downsampling conv for key/value maps.
/// Weights per channel; 1/16 initialization makes it average pooling.
struct KvCompressorParams {
    size_t channels = 0;
    std::vector<double> k_weights; // channels x 16, row-major per channel
    std::vector<double> v_weights;

    static KvCompressorParams average_pool_init(size_t channels);
};

/// Image K,V maps replaced by their conv-downsampled versions (text rows
/// untouched), then dense attention against the shortened key set. Grids
/// whose H or W is not a multiple of 4 are zero-padded; compressed tokens
/// covering only padding are dropped.
Matrix kv_compressed_attention(const AttentionInputs &in, const KvCompressorParams &params);

/// Two-stage agent attention: agents are average-pooled image queries
/// (factor down_factor per axis) plus the text queries kept as their own
/// agents. A = softmax(Down(Q) K^T * scale) V, then
/// O = softmax(Q Down(Q)^T * scale) A.
Matrix agent_attention(const AttentionInputs &in, size_t down_factor);

/// Slot attention: s learnable slots P aggregate keys/values via
/// softmax(P K^T * scale), then standard attention runs against the slots.
Matrix slot_attention(const AttentionInputs &in, const Matrix &slots);

/// Seeded self-attention inputs over a grid (Q, then K, then V from one
/// stream). The CLI benchmark and the parallel harness share this so their
/// output hashes are comparable.
AttentionInputs random_attention_inputs(const TokenGrid &grid, size_t c, uint64_t seed);

} // namespace clearlab
